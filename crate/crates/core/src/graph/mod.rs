//! Bayesian networks over continuous latent and observed variables, held as
//! differentiable factor graphs.
//!
//! A [`FactorGraphModel`] is a DAG of [`NodeSpec`]s, each carrying exactly one
//! [`ConditionalFactor`]. All learnable quantities live in one flat parameter
//! vector `theta`; the [`ParamLayout`] maps parameter names onto disjoint
//! contiguous slices of it.

mod compile;
mod numeric;
mod spec;

pub use compile::{grad_log_joint_latents, grad_log_joint_params, FactorSelection, LogJointGraph};
pub use numeric::{
    ancestral_sample, complete_assignment, eval_link, factor_log_density, log_joint, log_joint_terms, node_link_input,
    scale_values, tensor_values,
};
pub use spec::{
    build_model, ActivationDesc, FamilyDesc, KindDesc, LinkDesc, ModelFile, ModelSpec, NodeDesc, ParamSpec, ScaleDesc,
    TensorDesc,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Latent,
    Observed,
    Auxiliary,
    Deterministic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => crate::autodiff::sigmoid(v),
        }
    }
}

/// A weight, bias or constant: either a parameter slice or fixed values.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorSource {
    Param(ParamId),
    Fixed(Vec<f64>),
}

/// Scale of a location-scale family.
#[derive(Clone, Debug, PartialEq)]
pub enum ScaleSource {
    Fixed(f64),
    /// The parameter slice holds `log σ` (length 1, or one entry per coordinate).
    LogParam(ParamId),
}

/// Maps the concatenated values of a node's parents to the family's location
/// (mean, logits, log-rate or lower bound).
#[derive(Clone, Debug, PartialEq)]
pub enum LinkFn {
    /// Ignores the parents.
    Constant(TensorSource),
    /// Passes the concatenated parents through unchanged.
    Identity,
    /// `activation(W u + b)`.
    Affine {
        activation: Activation,
        weight: TensorSource,
        bias: Option<TensorSource>,
    },
    /// Stages applied left to right.
    Compose(Vec<LinkFn>),
}

/// How a deterministic node computes its value. Every variant except
/// [`DeterministicFn::Link`] takes an auxiliary noise node as its last parent;
/// the link sees the remaining parents.
#[derive(Clone, Debug, PartialEq)]
pub enum DeterministicFn {
    /// `z = link(pa)`
    Link,
    /// `z = link(pa) + scale ⊙ ε`
    LocationScale { scale: ScaleSource },
    /// `z = exp(link(pa) + scale ⊙ ε)`
    LogNormal { scale: ScaleSource },
    /// `z = -log(1 - ε) · exp(-link(pa))`, the link giving the log-rate.
    ExponentialInverseCdf,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// `N(link, scale²)` per coordinate.
    Gaussian {
        scale: ScaleSource,
    },
    /// `U(link, link + width)` per coordinate.
    Uniform {
        width: ScaleSource,
    },
    /// `Exponential(exp(link))` per coordinate.
    Exponential,
    /// `log z ~ N(link, scale²)` per coordinate.
    LogNormal {
        scale: ScaleSource,
    },
    /// `Bernoulli(sigmoid(link))` per coordinate.
    Bernoulli,
    StandardNormalAux,
    UniformAux,
    Deterministic(DeterministicFn),
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian { .. } => "gaussian",
            Family::Uniform { .. } => "uniform",
            Family::Exponential => "exponential",
            Family::LogNormal { .. } => "lognormal",
            Family::Bernoulli => "bernoulli",
            Family::StandardNormalAux => "standard_normal",
            Family::UniformAux => "unit_uniform",
            Family::Deterministic(_) => "deterministic",
        }
    }

    fn is_density(&self) -> bool {
        matches!(
            self,
            Family::Gaussian { .. } | Family::Uniform { .. } | Family::Exponential | Family::LogNormal { .. }
        )
    }

    fn is_aux(&self) -> bool {
        matches!(self, Family::StandardNormalAux | Family::UniformAux)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalFactor {
    pub family: Family,
    pub link: LinkFn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec {
    pub name: String,
    pub kind: NodeKind,
    pub dim: usize,
    pub parents: Vec<NodeId>,
    pub factor: ConditionalFactor,
}

impl NodeSpec {
    /// Parents seen by the link function (excludes the auxiliary input of a
    /// reparameterized node).
    pub fn link_parents(&self) -> &[NodeId] {
        match &self.factor.family {
            Family::Deterministic(DeterministicFn::Link) => &self.parents,
            Family::Deterministic(_) => &self.parents[..self.parents.len() - 1],
            _ => &self.parents,
        }
    }

    /// Auxiliary noise parent of a reparameterized deterministic node.
    pub fn noise_parent(&self) -> Option<NodeId> {
        match &self.factor.family {
            Family::Deterministic(DeterministicFn::Link) => None,
            Family::Deterministic(_) => self.parents.last().copied(),
            _ => None,
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self.kind, NodeKind::Latent | NodeKind::Auxiliary)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Disjoint, contiguous, covering slices of the flat parameter vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId> {
        if self.find(name).is_some() {
            return Err(Error::Duplicate(name.to_string()));
        }
        let entry = ParamEntry {
            name: name.to_string(),
            offset: self.total,
            shape,
        };
        self.total += entry.len();
        self.entries.push(entry);
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn slice<'a>(&self, id: ParamId, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.entries[id.0].range()]
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.total {
            return Err(Error::Shape(format!(
                "parameter vector has length {}, layout expects {}",
                theta.len(),
                self.total
            )));
        }
        Ok(())
    }

    /// Build a parameter vector from named values; missing names are zero.
    pub fn theta_from_named(&self, named: &BTreeMap<String, Vec<f64>>) -> Result<Vec<f64>> {
        let mut theta = vec![0.0; self.total];
        for (name, vals) in named {
            let id = self.find(name).ok_or_else(|| Error::UnknownParam(name.clone()))?;
            let e = self.entry(id);
            if vals.len() != e.len() {
                return Err(Error::Shape(format!(
                    "parameter `{name}` expects {} values, got {}",
                    e.len(),
                    vals.len()
                )));
            }
            theta[e.range()].copy_from_slice(vals);
        }
        Ok(theta)
    }
}

/// Values for (a subset of) the nodes of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    values: BTreeMap<NodeId, Vec<f64>>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, node: NodeId, values: Vec<f64>) {
        self.values.insert(node, values);
    }

    pub fn get(&self, node: NodeId) -> Option<&[f64]> {
        self.values.get(&node).map(|v| v.as_slice())
    }

    pub fn require(&self, model: &FactorGraphModel, node: NodeId) -> Result<&[f64]> {
        self.get(node)
            .ok_or_else(|| Error::InvalidModel(format!("no value for node `{}`", model.node(node).name)))
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.values.contains_key(&node)
    }

    pub fn remove(&mut self, node: NodeId) -> Option<Vec<f64>> {
        self.values.remove(&node)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &[f64])> {
        self.values.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Concatenate the values of `nodes` in order.
    pub fn flatten(&self, model: &FactorGraphModel, nodes: &[NodeId]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for n in nodes {
            out.extend_from_slice(self.require(model, *n)?);
        }
        Ok(out)
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn scatter(&mut self, model: &FactorGraphModel, nodes: &[NodeId], flat: &[f64]) {
        let mut off = 0;
        for n in nodes {
            let d = model.node(*n).dim;
            self.set(*n, flat[off..off + d].to_vec());
            off += d;
        }
        debug_assert_eq!(off, flat.len());
    }

    /// Keep only the values of observed nodes.
    pub fn observed_part(&self, model: &FactorGraphModel) -> Assignment {
        let mut out = Assignment::new();
        for (n, v) in self.iter() {
            if model.node(n).kind == NodeKind::Observed {
                out.set(n, v.to_vec());
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorGraphModel {
    nodes: Vec<NodeSpec>,
    children: Vec<Vec<NodeId>>,
    layout: ParamLayout,
    topo: Vec<NodeId>,
}

impl FactorGraphModel {
    /// Validate a node list and compute the topological order. Latent Gaussian
    /// nodes with a fixed scale of exactly zero become deterministic.
    pub fn new(mut nodes: Vec<NodeSpec>, layout: ParamLayout) -> Result<Self> {
        let mut names = BTreeSet::new();
        for n in &nodes {
            if !names.insert(n.name.as_str()) {
                return Err(Error::Duplicate(n.name.clone()));
            }
            if n.dim == 0 {
                return Err(Error::Shape(format!("node `{}` has dimension 0", n.name)));
            }
            for p in &n.parents {
                if p.0 >= nodes.len() {
                    return Err(Error::UnknownNode(format!("#{}", p.0)));
                }
            }
        }
        for n in nodes.iter_mut() {
            if n.kind == NodeKind::Latent {
                if let Family::Gaussian {
                    scale: ScaleSource::Fixed(s),
                } = n.factor.family
                {
                    if s == 0.0 {
                        n.kind = NodeKind::Deterministic;
                        n.factor.family = Family::Deterministic(DeterministicFn::Link);
                    }
                }
            }
        }

        let mut children = vec![Vec::new(); nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            for p in &n.parents {
                children[p.0].push(NodeId(i));
            }
        }
        let topo = topo_sort(&nodes, &children)?;
        let model = FactorGraphModel {
            nodes,
            children,
            layout,
            topo,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            let fam = &n.factor.family;
            let ok = match n.kind {
                NodeKind::Latent => fam.is_density(),
                NodeKind::Observed => fam.is_density() || matches!(fam, Family::Bernoulli),
                NodeKind::Auxiliary => fam.is_aux(),
                NodeKind::Deterministic => matches!(fam, Family::Deterministic(_)),
            };
            if !ok {
                return Err(Error::InvalidModel(format!(
                    "node `{}` of kind {:?} cannot use family {}",
                    n.name,
                    n.kind,
                    fam.name()
                )));
            }
            if n.kind == NodeKind::Observed && !self.children[i].is_empty() {
                return Err(Error::ObservedNotLeaf(n.name.clone()));
            }
            if n.kind == NodeKind::Auxiliary && !n.parents.is_empty() {
                return Err(Error::InvalidModel(format!(
                    "auxiliary node `{}` must be a root",
                    n.name
                )));
            }
            if let Some(eps) = n.noise_parent() {
                let e = &self.nodes[eps.0];
                if e.kind != NodeKind::Auxiliary || e.dim != n.dim {
                    return Err(Error::Shape(format!(
                        "node `{}` needs an auxiliary last parent of dim {}",
                        n.name, n.dim
                    )));
                }
            }
            if n.kind == NodeKind::Auxiliary {
                continue;
            }
            let in_dim: usize = n.link_parents().iter().map(|p| self.nodes[p.0].dim).sum();
            let out = self.link_output_dim(&n.factor.link, in_dim, &n.name)?;
            if out != n.dim {
                return Err(Error::Shape(format!(
                    "link of node `{}` produces dim {out}, node has dim {}",
                    n.name, n.dim
                )));
            }
            let scale = match fam {
                Family::Gaussian { scale }
                | Family::LogNormal { scale }
                | Family::Uniform { width: scale }
                | Family::Deterministic(DeterministicFn::LocationScale { scale })
                | Family::Deterministic(DeterministicFn::LogNormal { scale }) => Some(scale),
                _ => None,
            };
            match scale {
                Some(ScaleSource::LogParam(p)) => {
                    let len = self.param_len(*p)?;
                    if len != 1 && len != n.dim {
                        return Err(Error::Shape(format!(
                            "scale parameter of `{}` has length {len}, expected 1 or {}",
                            n.name, n.dim
                        )));
                    }
                }
                Some(ScaleSource::Fixed(s)) if !(*s >= 0.0) || !s.is_finite() => {
                    return Err(Error::InvalidModel(format!("node `{}` has invalid scale {s}", n.name)));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn param_len(&self, p: ParamId) -> Result<usize> {
        if p.0 >= self.layout.entries.len() {
            return Err(Error::UnknownParam(format!("#{}", p.0)));
        }
        Ok(self.layout.entry(p).len())
    }

    fn tensor_len(&self, t: &TensorSource) -> Result<usize> {
        match t {
            TensorSource::Param(p) => self.param_len(*p),
            TensorSource::Fixed(v) => Ok(v.len()),
        }
    }

    fn link_output_dim(&self, link: &LinkFn, in_dim: usize, name: &str) -> Result<usize> {
        match link {
            LinkFn::Constant(t) => self.tensor_len(t),
            LinkFn::Identity => {
                if in_dim == 0 {
                    Err(Error::Shape(format!("identity link of root node `{name}`")))
                } else {
                    Ok(in_dim)
                }
            }
            LinkFn::Affine { weight, bias, .. } => {
                let wl = self.tensor_len(weight)?;
                if in_dim == 0 || wl % in_dim != 0 {
                    return Err(Error::Shape(format!(
                        "affine weight of `{name}` has {wl} entries, not a multiple of input dim {in_dim}"
                    )));
                }
                let out = wl / in_dim;
                if let Some(b) = bias {
                    let bl = self.tensor_len(b)?;
                    if bl != out {
                        return Err(Error::Shape(format!(
                            "affine bias of `{name}` has {bl} entries, expected {out}"
                        )));
                    }
                }
                Ok(out)
            }
            LinkFn::Compose(stages) => {
                let mut d = in_dim;
                for s in stages {
                    d = self.link_output_dim(s, d, name)?;
                }
                Ok(d)
            }
        }
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeSpec {
        &self.nodes[id.0]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id.0]
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total_len()
    }

    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    pub fn require(&self, name: &str) -> Result<NodeId> {
        self.find(name).ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    fn nodes_of(&self, pred: impl Fn(&NodeSpec) -> bool) -> Vec<NodeId> {
        self.topo.iter().copied().filter(|n| pred(self.node(*n))).collect()
    }

    /// Latent and auxiliary nodes, in topological order: the coordinates a
    /// sampler moves.
    pub fn free_nodes(&self) -> Vec<NodeId> {
        self.nodes_of(|n| n.is_free())
    }

    pub fn latent_nodes(&self) -> Vec<NodeId> {
        self.nodes_of(|n| n.kind == NodeKind::Latent)
    }

    pub fn observed_nodes(&self) -> Vec<NodeId> {
        self.nodes_of(|n| n.kind == NodeKind::Observed)
    }

    pub fn auxiliary_nodes(&self) -> Vec<NodeId> {
        self.nodes_of(|n| n.kind == NodeKind::Auxiliary)
    }

    pub fn deterministic_nodes(&self) -> Vec<NodeId> {
        self.nodes_of(|n| n.kind == NodeKind::Deterministic)
    }

    pub fn dim_of(&self, nodes: &[NodeId]) -> usize {
        nodes.iter().map(|n| self.node(*n).dim).sum()
    }

    pub fn num_free_coords(&self) -> usize {
        self.dim_of(&self.free_nodes())
    }

    /// Fixed scale of a node's family, if it has one.
    pub fn fixed_scale(&self, id: NodeId) -> Option<f64> {
        match &self.node(id).factor.family {
            Family::Gaussian {
                scale: ScaleSource::Fixed(s),
            }
            | Family::LogNormal {
                scale: ScaleSource::Fixed(s),
            } => Some(*s),
            _ => None,
        }
    }
}

/// Kahn's algorithm, always emitting the lowest-index ready node so the order
/// is unique for a given node list.
fn topo_sort(nodes: &[NodeSpec], children: &[Vec<NodeId>]) -> Result<Vec<NodeId>> {
    let mut indeg: Vec<usize> = nodes.iter().map(|n| n.parents.len()).collect();
    let mut ready: BTreeSet<usize> = (0..nodes.len()).filter(|i| indeg[*i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(NodeId(i));
        // children holds one entry per parent slot, matching indeg
        for c in &children[i] {
            indeg[c.0] -= 1;
            if indeg[c.0] == 0 {
                ready.insert(c.0);
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck = (0..nodes.len()).find(|i| indeg[*i] > 0).unwrap_or(0);
        return Err(Error::Cycle(nodes[stuck].name.clone()));
    }
    Ok(order)
}
