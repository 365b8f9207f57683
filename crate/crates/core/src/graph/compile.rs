//! Lowering a [`FactorGraphModel`] to an [`ExprGraph`] whose root is the
//! log-joint (or the observed-factor part of it).
//!
//! Every non-deterministic node and every parameter entry becomes an input
//! leaf; deterministic nodes become expressions of their parents, so adjoints
//! of auxiliary nodes include the paths through reparameterized children.

use super::{
    Activation, Assignment, DeterministicFn, FactorGraphModel, Family, LinkFn, NodeId, NodeKind, ParamLayout,
    ScaleSource, TensorSource,
};
use crate::autodiff::{Bindings, ExprGraph, ExprId, GradientRecord, InputId};
use crate::error::{Error, Result};

/// Which factors contribute to the root.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorSelection {
    /// `log p(x, z)`: every factor.
    All,
    /// `log p(x | pa(x))`: factors of observed nodes only.
    ObservedOnly,
}

pub struct LogJointGraph {
    graph: ExprGraph,
    bindings: Bindings,
    record: GradientRecord,
    param_inputs: Vec<InputId>,
    node_inputs: Vec<Option<InputId>>,
    node_dims: Vec<usize>,
    node_names: Vec<String>,
    layout: ParamLayout,
}

struct Lowering<'m> {
    model: &'m FactorGraphModel,
    g: ExprGraph,
    params: Vec<ExprId>,
    values: Vec<Option<ExprId>>,
}

impl Lowering<'_> {
    fn tensor(&mut self, t: &TensorSource) -> ExprId {
        match t {
            TensorSource::Param(p) => self.params[p.0],
            TensorSource::Fixed(v) => self.g.constant(v.clone()),
        }
    }

    fn scale(&mut self, s: &ScaleSource) -> ExprId {
        match s {
            ScaleSource::Fixed(v) => self.g.scalar(*v),
            ScaleSource::LogParam(p) => {
                let lp = self.params[p.0];
                self.g.exp(lp)
            }
        }
    }

    fn link(&mut self, link: &LinkFn, input: Option<ExprId>) -> Result<ExprId> {
        match link {
            LinkFn::Constant(t) => Ok(self.tensor(t)),
            LinkFn::Identity => input.ok_or_else(|| Error::Shape("identity link without parents".into())),
            LinkFn::Affine {
                activation,
                weight,
                bias,
            } => {
                let u = input.ok_or_else(|| Error::Shape("affine link without parents".into()))?;
                let w = self.tensor(weight);
                let b = bias.as_ref().map(|b| self.tensor(b));
                let a = self.g.affine(w, u, b)?;
                Ok(match activation {
                    Activation::Identity => a,
                    Activation::Tanh => self.g.tanh(a),
                    Activation::Sigmoid => self.g.sigmoid(a),
                })
            }
            LinkFn::Compose(stages) => {
                let mut cur = input;
                for s in stages {
                    cur = Some(self.link(s, cur)?);
                }
                cur.ok_or_else(|| Error::Shape("empty composed link without parents".into()))
            }
        }
    }

    fn link_of(&mut self, node: NodeId) -> Result<ExprId> {
        let spec = self.model.node(node);
        let parts: Vec<ExprId> = spec
            .link_parents()
            .iter()
            .map(|p| self.values[p.0].expect("parents precede children"))
            .collect();
        let input = if parts.is_empty() {
            None
        } else {
            Some(self.g.concat(parts)?)
        };
        self.link(&spec.factor.link, input)
    }

    fn deterministic(&mut self, node: NodeId, f: &DeterministicFn) -> Result<ExprId> {
        let m = self.link_of(node)?;
        let eps = self
            .model
            .node(node)
            .noise_parent()
            .map(|e| self.values[e.0].expect("parents precede children"));
        Ok(match f {
            DeterministicFn::Link => m,
            DeterministicFn::LocationScale { scale } => {
                let s = self.scale(scale);
                let se = self.g.mul(s, eps.expect("validated noise parent"))?;
                self.g.add(m, se)?
            }
            DeterministicFn::LogNormal { scale } => {
                let s = self.scale(scale);
                let se = self.g.mul(s, eps.expect("validated noise parent"))?;
                let arg = self.g.add(m, se)?;
                self.g.exp(arg)
            }
            DeterministicFn::ExponentialInverseCdf => {
                let one = self.g.scalar(1.0);
                let ne = self.g.neg(eps.expect("validated noise parent"));
                let om = self.g.add(one, ne)?;
                let l = self.g.log(om);
                let nl = self.g.neg(l);
                let nm = self.g.neg(m);
                let rate_inv = self.g.exp(nm);
                self.g.mul(nl, rate_inv)?
            }
        })
    }

    /// Terms whose element sum is `log p(v | pa(v))`.
    fn factor_terms(&mut self, node: NodeId, out: &mut Vec<ExprId>) -> Result<()> {
        let x = self.values[node.0].expect("node lowered");
        match &self.model.node(node).factor.family {
            Family::Deterministic(_) => {}
            Family::StandardNormalAux => {
                let (m, s) = (self.g.scalar(0.0), self.g.scalar(1.0));
                out.push(self.g.gaussian_log_pdf(x, m, s)?);
            }
            Family::UniformAux => {
                let (l, w) = (self.g.scalar(0.0), self.g.scalar(1.0));
                out.push(self.g.uniform_log_pdf(x, l, w)?);
            }
            Family::Gaussian { scale } => {
                let m = self.link_of(node)?;
                let s = self.scale(scale);
                out.push(self.g.gaussian_log_pdf(x, m, s)?);
            }
            Family::LogNormal { scale } => {
                let m = self.link_of(node)?;
                let s = self.scale(scale);
                let lx = self.g.log(x);
                out.push(self.g.gaussian_log_pdf(lx, m, s)?);
                out.push(self.g.neg(lx));
            }
            Family::Uniform { width } => {
                let l = self.link_of(node)?;
                let w = self.scale(width);
                out.push(self.g.uniform_log_pdf(x, l, w)?);
            }
            Family::Exponential => {
                let eta = self.link_of(node)?;
                out.push(self.g.exponential_log_pdf(x, eta)?);
            }
            Family::Bernoulli => {
                let a = self.link_of(node)?;
                out.push(self.g.bernoulli_log_pmf(x, a)?);
            }
        }
        Ok(())
    }
}

impl LogJointGraph {
    pub fn compile(model: &FactorGraphModel, selection: FactorSelection) -> Result<Self> {
        let mut lw = Lowering {
            model,
            g: ExprGraph::new(),
            params: Vec::new(),
            values: vec![None; model.num_nodes()],
        };
        let mut param_inputs = Vec::new();
        for e in model.layout().entries() {
            let (id, ex) = lw.g.input(e.len());
            param_inputs.push(id);
            lw.params.push(ex);
        }
        let mut node_inputs = vec![None; model.num_nodes()];
        for &n in model.topo_order() {
            let spec = model.node(n);
            let v = match &spec.factor.family {
                Family::Deterministic(f) => lw.deterministic(n, f)?,
                _ => {
                    let (id, ex) = lw.g.input(spec.dim);
                    node_inputs[n.0] = Some(id);
                    ex
                }
            };
            lw.values[n.0] = Some(v);
        }
        let mut terms = Vec::new();
        for &n in model.topo_order() {
            let keep = match selection {
                FactorSelection::All => true,
                FactorSelection::ObservedOnly => model.node(n).kind == NodeKind::Observed,
            };
            if keep {
                lw.factor_terms(n, &mut terms)?;
            }
        }
        let root = lw.g.sum(terms);
        lw.g.set_root(root)?;
        let bindings = Bindings::for_graph(&lw.g);
        let record = GradientRecord {
            value: 0.0,
            grads: Vec::new(),
        };
        Ok(LogJointGraph {
            graph: lw.g,
            bindings,
            record,
            param_inputs,
            node_inputs,
            node_dims: model.nodes().iter().map(|n| n.dim).collect(),
            node_names: model.nodes().iter().map(|n| n.name.clone()).collect(),
            layout: model.layout().clone(),
        })
    }

    pub fn bind_theta(&mut self, theta: &[f64]) -> Result<()> {
        self.layout.check_theta(theta)?;
        for (e, id) in self.layout.entries().iter().zip(&self.param_inputs) {
            self.bindings.set(*id, &theta[e.range()]);
        }
        Ok(())
    }

    /// Bind a non-deterministic node's value.
    pub fn bind_node(&mut self, node: NodeId, values: &[f64]) -> Result<()> {
        let id = self.node_inputs[node.0].ok_or_else(|| {
            Error::InvalidModel(format!(
                "node `{}` is deterministic and cannot be bound",
                self.node_names[node.0]
            ))
        })?;
        if values.len() != self.node_dims[node.0] {
            return Err(Error::Shape(format!(
                "node `{}` has dim {}, got {} values",
                self.node_names[node.0],
                self.node_dims[node.0],
                values.len()
            )));
        }
        self.bindings.set(id, values);
        Ok(())
    }

    /// Bind every non-deterministic node present in `a`; deterministic
    /// entries are ignored.
    pub fn bind_assignment(&mut self, a: &Assignment) -> Result<()> {
        for (n, v) in a.iter() {
            if self.node_inputs[n.0].is_some() {
                self.bind_node(n, v)?;
            }
        }
        Ok(())
    }

    /// Bind nodes from a flat vector laid out as [`Assignment::flatten`] would.
    pub fn bind_flat(&mut self, nodes: &[NodeId], flat: &[f64]) -> Result<()> {
        let mut off = 0;
        for n in nodes {
            let d = self.node_dims[n.0];
            self.bind_node(*n, &flat[off..off + d])?;
            off += d;
        }
        Ok(())
    }

    pub fn value(&mut self) -> Result<f64> {
        self.graph.evaluate(&self.bindings)
    }

    /// Evaluate and retain adjoints for [`node_grad`](Self::node_grad) and
    /// [`theta_grad`](Self::theta_grad).
    pub fn value_and_grad(&mut self) -> Result<f64> {
        self.graph
            .evaluate_with_gradient_into(&self.bindings, &mut self.record)?;
        Ok(self.record.value)
    }

    /// Adjoint of a non-deterministic node from the last
    /// [`value_and_grad`](Self::value_and_grad).
    pub fn node_grad(&self, node: NodeId) -> &[f64] {
        let id = self.node_inputs[node.0].expect("deterministic nodes have no adjoint leaf");
        self.record.grad(id)
    }

    pub fn flat_grad_into(&self, nodes: &[NodeId], out: &mut [f64]) {
        let mut off = 0;
        for n in nodes {
            let g = self.node_grad(*n);
            out[off..off + g.len()].copy_from_slice(g);
            off += g.len();
        }
    }

    pub fn theta_grad(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.total_len()];
        self.theta_grad_into(&mut out);
        out
    }

    pub fn theta_grad_into(&self, out: &mut [f64]) {
        for (e, id) in self.layout.entries().iter().zip(&self.param_inputs) {
            out[e.range()].copy_from_slice(self.record.grad(*id));
        }
    }

    pub fn expr_graph_mut(&mut self) -> (&mut ExprGraph, &Bindings) {
        (&mut self.graph, &self.bindings)
    }
}

fn evaluated(model: &FactorGraphModel, theta: &[f64], a: &Assignment) -> Result<LogJointGraph> {
    let mut g = LogJointGraph::compile(model, FactorSelection::All)?;
    g.bind_theta(theta)?;
    g.bind_assignment(a)?;
    g.value_and_grad()?;
    Ok(g)
}

/// `∇ log p_θ` with respect to the free (latent and auxiliary) nodes,
/// flattened in topological order.
pub fn grad_log_joint_latents(model: &FactorGraphModel, theta: &[f64], a: &Assignment) -> Result<Vec<f64>> {
    let g = evaluated(model, theta, a)?;
    let free = model.free_nodes();
    let mut out = vec![0.0; model.dim_of(&free)];
    g.flat_grad_into(&free, &mut out);
    Ok(out)
}

/// `∇_θ log p_θ` in parameter-layout order.
pub fn grad_log_joint_params(model: &FactorGraphModel, theta: &[f64], a: &Assignment) -> Result<Vec<f64>> {
    Ok(evaluated(model, theta, a)?.theta_grad())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use crate::graph::{build_model, log_joint, ModelSpec};

    const MLP: &str = r#"
[[params]]
name = "w1"
shape = [3, 2]
[[params]]
name = "b1"
shape = [3]
[[params]]
name = "w2"
shape = [2, 3]
[[params]]
name = "ls"
shape = [1]

[[nodes]]
name = "z"
kind = "latent"
dim = 2
family = "gaussian"
scale = 1.0

[[nodes]]
name = "h"
kind = "latent"
dim = 3
parents = ["z"]
family = "gaussian"
scale = { log_param = "ls" }
link = { kind = "affine", activation = "tanh", weight = "w1", bias = "b1" }

[[nodes]]
name = "x"
kind = "observed"
dim = 2
parents = ["h"]
family = "bernoulli"
link = { kind = "affine", weight = "w2" }
"#;

    fn setup() -> (FactorGraphModel, Vec<f64>, Assignment) {
        let m = build_model(&ModelSpec::from_toml(MLP).unwrap()).unwrap();
        let theta: Vec<f64> = (0..m.num_params()).map(|i| 0.3 * ((i as f64) * 1.7).sin()).collect();
        let mut a = Assignment::new();
        a.set(m.find("z").unwrap(), vec![0.4, -0.9]);
        a.set(m.find("h").unwrap(), vec![0.1, 0.5, -0.3]);
        a.set(m.find("x").unwrap(), vec![1.0, 0.0]);
        (m, theta, a)
    }

    #[test]
    fn compiled_value_matches_numeric_path() {
        let (m, theta, a) = setup();
        let mut g = LogJointGraph::compile(&m, FactorSelection::All).unwrap();
        g.bind_theta(&theta).unwrap();
        g.bind_assignment(&a).unwrap();
        let want = log_joint(&m, &theta, &a).unwrap();
        assert!((g.value().unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn log_joint_gradients_pass_fd_check() {
        let (m, theta, a) = setup();
        let mut g = LogJointGraph::compile(&m, FactorSelection::All).unwrap();
        g.bind_theta(&theta).unwrap();
        g.bind_assignment(&a).unwrap();
        let (eg, b) = g.expr_graph_mut();
        let b = b.clone();
        assert!(finite_difference_check(eg, &b, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn observed_only_drops_latent_factors() {
        let (m, theta, a) = setup();
        let mut all = LogJointGraph::compile(&m, FactorSelection::All).unwrap();
        let mut obs = LogJointGraph::compile(&m, FactorSelection::ObservedOnly).unwrap();
        for g in [&mut all, &mut obs] {
            g.bind_theta(&theta).unwrap();
            g.bind_assignment(&a).unwrap();
        }
        let terms = crate::graph::log_joint_terms(&m, &theta, &a).unwrap();
        let x = m.find("x").unwrap();
        let lx = terms.iter().find(|t| t.0 == x).unwrap().1;
        assert!((obs.value().unwrap() - lx).abs() < 1e-12);
        let rest: f64 = terms.iter().filter(|t| t.0 != x).map(|t| t.1).sum();
        assert!((all.value().unwrap() - obs.value().unwrap() - rest).abs() < 1e-12);
    }

    #[test]
    fn deterministic_nodes_cannot_be_bound() {
        let src = r#"
[[nodes]]
name = "z"
kind = "latent"
dim = 1
family = "gaussian"
scale = 0.0
link = { kind = "constant", value = [1.0] }
[[nodes]]
name = "x"
kind = "observed"
dim = 1
parents = ["z"]
family = "gaussian"
scale = 1.0
"#;
        let m = build_model(&ModelSpec::from_toml(src).unwrap()).unwrap();
        let mut g = LogJointGraph::compile(&m, FactorSelection::All).unwrap();
        assert!(g.bind_node(NodeId(0), &[0.0]).is_err());
    }
}
