//! Centered (CP) and differentiable non-centered (DNCP) forms of latent nodes.
//!
//! A DNCP node `z_j ~ p(z_j | pa_j)` is rewritten as `z_j = g(pa_j, ε_j, θ)`
//! with a new auxiliary root `ε_j`. Every transform here acts per coordinate
//! and has an exact inverse so chain states can move between the two systems.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::SIGMA_FLOOR;
use crate::error::{Error, Result};
use crate::graph::{
    complete_assignment, eval_link, node_link_input, scale_values, Assignment, ConditionalFactor, DeterministicFn,
    FactorGraphModel, Family, LinkFn, NodeId, NodeKind, NodeSpec, ScaleSource,
};
use crate::rng::SimRng;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Marginal of the auxiliary variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseDist {
    StandardNormal,
    UnitUniform,
}

impl NoiseDist {
    pub fn log_pdf(self, e: f64) -> f64 {
        match self {
            NoiseDist::StandardNormal => -0.5 * e * e - HALF_LN_2PI,
            NoiseDist::UnitUniform => {
                if (0.0..=1.0).contains(&e) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn sample(self, rng: &mut SimRng) -> f64 {
        match self {
            NoiseDist::StandardNormal => rng.sample(StandardNormal),
            NoiseDist::UnitUniform => rng.random(),
        }
    }

    fn family(self) -> Family {
        match self {
            NoiseDist::StandardNormal => Family::StandardNormalAux,
            NoiseDist::UnitUniform => Family::UniformAux,
        }
    }
}

/// The scalar map `z = g(m, s, ε)`, where `m` is the link output (location,
/// lower bound or log-rate) and `s` the scale or width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarTransform {
    /// `m + s·ε`, `ε ~ N(0, 1)`.
    Normal,
    /// `m + s·ε`, `ε ~ U(0, 1)`.
    Uniform,
    /// `-log(1 - ε)·exp(-m)`, `ε ~ U(0, 1)`.
    Exponential,
    /// `exp(m + s·ε)`, `ε ~ N(0, 1)`.
    LogNormal,
}

impl ScalarTransform {
    pub fn noise(self) -> NoiseDist {
        match self {
            ScalarTransform::Normal | ScalarTransform::LogNormal => NoiseDist::StandardNormal,
            ScalarTransform::Uniform | ScalarTransform::Exponential => NoiseDist::UnitUniform,
        }
    }

    pub fn g(self, m: f64, s: f64, e: f64) -> f64 {
        match self {
            ScalarTransform::Normal | ScalarTransform::Uniform => m + s * e,
            ScalarTransform::Exponential => -(-e).ln_1p() * (-m).exp(),
            ScalarTransform::LogNormal => (m + s * e).exp(),
        }
    }

    pub fn g_inv(self, m: f64, s: f64, z: f64) -> Result<f64> {
        let e = match self {
            ScalarTransform::Normal => (z - m) / s,
            ScalarTransform::Uniform => {
                let e = (z - m) / s;
                if !(0.0..=1.0).contains(&e) {
                    return Err(Error::NonInvertible(format!("{z} outside [{m}, {}]", m + s)));
                }
                e
            }
            ScalarTransform::Exponential => {
                if z < 0.0 {
                    return Err(Error::NonInvertible(format!("exponential value {z} < 0")));
                }
                -(-z * m.exp()).exp_m1()
            }
            ScalarTransform::LogNormal => {
                if z <= 0.0 {
                    return Err(Error::NonInvertible(format!("log-normal value {z} <= 0")));
                }
                (z.ln() - m) / s
            }
        };
        if !e.is_finite() {
            return Err(Error::NonInvertible(format!("inverse of {z} is {e}")));
        }
        Ok(e)
    }

    /// `log |dz/dε|`.
    pub fn log_abs_det(self, m: f64, s: f64, e: f64) -> f64 {
        match self {
            ScalarTransform::Normal | ScalarTransform::Uniform => s.ln(),
            ScalarTransform::Exponential => -m - (-e).ln_1p(),
            ScalarTransform::LogNormal => s.ln() + m + s * e,
        }
    }

    /// `log p(z | m, s)` of the centered family.
    pub fn cp_log_pdf(self, m: f64, s: f64, z: f64) -> f64 {
        match self {
            ScalarTransform::Normal => {
                let r = (z - m) / s;
                -0.5 * r * r - s.ln() - HALF_LN_2PI
            }
            ScalarTransform::Uniform => {
                if z >= m && z <= m + s {
                    -s.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            ScalarTransform::Exponential => {
                if z < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    m - m.exp() * z
                }
            }
            ScalarTransform::LogNormal => {
                if z <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let r = (z.ln() - m) / s;
                -0.5 * r * r - s.ln() - HALF_LN_2PI - z.ln()
            }
        }
    }

    pub fn noise_log_pdf(self, e: f64) -> f64 {
        self.noise().log_pdf(e)
    }
}

/// Reparameterization of one latent node.
#[derive(Clone, Debug, PartialEq)]
pub struct DncpTransform {
    pub node: NodeId,
    pub kind: ScalarTransform,
    /// Scale or width; `None` for the exponential inverse CDF.
    pub scale: Option<ScaleSource>,
    pub link: LinkFn,
}

impl DncpTransform {
    pub fn noise(&self) -> NoiseDist {
        self.kind.noise()
    }

    fn deterministic_fn(&self) -> DeterministicFn {
        match self.kind {
            ScalarTransform::Normal | ScalarTransform::Uniform => DeterministicFn::LocationScale {
                scale: self.scale.clone().expect("location-scale transform has a scale"),
            },
            ScalarTransform::LogNormal => DeterministicFn::LogNormal {
                scale: self.scale.clone().expect("composition transform has a scale"),
            },
            ScalarTransform::Exponential => DeterministicFn::ExponentialInverseCdf,
        }
    }

    /// Link output and per-coordinate scale at the given link input.
    pub fn location_scale(&self, model: &FactorGraphModel, theta: &[f64], link_input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = eval_link(&self.link, theta, model.layout(), link_input);
        let s = match &self.scale {
            Some(sc) => scale_values(sc, theta, model.layout(), m.len()),
            None => vec![1.0; m.len()],
        };
        (m, s)
    }

    pub fn forward(&self, model: &FactorGraphModel, theta: &[f64], link_input: &[f64], eps: &[f64]) -> Vec<f64> {
        let (m, s) = self.location_scale(model, theta, link_input);
        (0..m.len()).map(|k| self.kind.g(m[k], s[k], eps[k])).collect()
    }

    pub fn inverse(&self, model: &FactorGraphModel, theta: &[f64], link_input: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let (m, s) = self.location_scale(model, theta, link_input);
        (0..m.len()).map(|k| self.kind.g_inv(m[k], s[k], z[k])).collect()
    }

    pub fn log_abs_det(&self, model: &FactorGraphModel, theta: &[f64], link_input: &[f64], eps: &[f64]) -> f64 {
        let (m, s) = self.location_scale(model, theta, link_input);
        (0..m.len()).map(|k| self.kind.log_abs_det(m[k], s[k], eps[k])).sum()
    }
}

fn check_scale(node: NodeId, scale: &ScaleSource) -> Result<()> {
    match scale {
        ScaleSource::Fixed(s) if *s < SIGMA_FLOOR => Err(Error::ZeroScale(format!("#{}", node.0))),
        _ => Ok(()),
    }
}

/// `z = μ(pa) + σ·ε`. Gaussian factors use `ε ~ N(0,1)`, uniform factors
/// `ε ~ U(0,1)` with the width as `σ`.
pub fn location_scale_transform(node: NodeId, factor: &ConditionalFactor) -> Result<DncpTransform> {
    let (kind, scale) = match &factor.family {
        Family::Gaussian { scale } => (ScalarTransform::Normal, scale),
        Family::Uniform { width } => (ScalarTransform::Uniform, width),
        f => {
            return Err(Error::UnsupportedFamily(format!(
                "location-scale transform of {}",
                f.name()
            )))
        }
    };
    check_scale(node, scale)?;
    Ok(DncpTransform {
        node,
        kind,
        scale: Some(scale.clone()),
        link: factor.link.clone(),
    })
}

/// `z = F⁻¹(ε) = -log(1-ε)/λ(pa)`, `ε ~ U(0,1)`.
pub fn inverse_cdf_transform(node: NodeId, factor: &ConditionalFactor) -> Result<DncpTransform> {
    match &factor.family {
        Family::Exponential => Ok(DncpTransform {
            node,
            kind: ScalarTransform::Exponential,
            scale: None,
            link: factor.link.clone(),
        }),
        f => Err(Error::UnsupportedFamily(format!(
            "inverse-CDF transform of {}",
            f.name()
        ))),
    }
}

/// `z = exp(μ(pa) + σ·ε)`, `ε ~ N(0,1)`.
pub fn composition_transform(node: NodeId, factor: &ConditionalFactor) -> Result<DncpTransform> {
    match &factor.family {
        Family::LogNormal { scale } => {
            check_scale(node, scale)?;
            Ok(DncpTransform {
                node,
                kind: ScalarTransform::LogNormal,
                scale: Some(scale.clone()),
                link: factor.link.clone(),
            })
        }
        f => Err(Error::UnsupportedFamily(format!(
            "composition transform of {}",
            f.name()
        ))),
    }
}

/// The registered transform for a latent node's family.
pub fn transform_for(model: &FactorGraphModel, node: NodeId) -> Result<DncpTransform> {
    let spec = model.node(node);
    if spec.kind != NodeKind::Latent {
        return Err(Error::InvalidModel(format!(
            "node `{}` is not a latent node",
            spec.name
        )));
    }
    match &spec.factor.family {
        Family::Gaussian { .. } | Family::Uniform { .. } => location_scale_transform(node, &spec.factor),
        Family::Exponential => inverse_cdf_transform(node, &spec.factor),
        Family::LogNormal { .. } => composition_transform(node, &spec.factor),
        f => Err(Error::UnsupportedFamily(f.name().to_string())),
    }
}

/// Which latent nodes are non-centered. Nodes absent from the map are CP.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterizationPlan {
    dncp: BTreeMap<NodeId, DncpTransform>,
}

impl ParameterizationPlan {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn all_dncp(model: &FactorGraphModel) -> Result<Self> {
        Self::for_nodes(model, &model.latent_nodes())
    }

    pub fn for_nodes(model: &FactorGraphModel, nodes: &[NodeId]) -> Result<Self> {
        let mut plan = Self::empty();
        for n in nodes {
            plan.insert(model, *n)?;
        }
        Ok(plan)
    }

    pub fn insert(&mut self, model: &FactorGraphModel, node: NodeId) -> Result<()> {
        let t = transform_for(model, node)?;
        self.dncp.insert(node, t);
        Ok(())
    }

    pub fn is_dncp(&self, node: NodeId) -> bool {
        self.dncp.contains_key(&node)
    }

    pub fn transform(&self, node: NodeId) -> Option<&DncpTransform> {
        self.dncp.get(&node)
    }

    pub fn len(&self) -> usize {
        self.dncp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dncp.is_empty()
    }
}

/// Name given to the auxiliary root of a reparameterized node.
pub fn aux_name(node_name: &str) -> String {
    format!("eps_{node_name}")
}

/// Rewrite every DNCP node as a deterministic node fed by a new auxiliary
/// root. Original nodes keep their ids; auxiliary roots are appended in plan
/// order.
pub fn apply_plan(model: &FactorGraphModel, plan: &ParameterizationPlan) -> Result<FactorGraphModel> {
    if plan.is_empty() {
        return Ok(model.clone());
    }
    let mut nodes: Vec<NodeSpec> = model.nodes().to_vec();
    for (node, t) in &plan.dncp {
        let orig = model.node(*node);
        if orig.kind != NodeKind::Latent {
            return Err(Error::InvalidModel(format!("node `{}` is not latent", orig.name)));
        }
        let aux = NodeId(nodes.len());
        nodes.push(NodeSpec {
            name: aux_name(&orig.name),
            kind: NodeKind::Auxiliary,
            dim: orig.dim,
            parents: Vec::new(),
            factor: ConditionalFactor {
                family: t.noise().family(),
                link: LinkFn::Identity,
            },
        });
        let n = &mut nodes[node.0];
        n.kind = NodeKind::Deterministic;
        n.parents.push(aux);
        n.factor = ConditionalFactor {
            family: Family::Deterministic(t.deterministic_fn()),
            link: t.link.clone(),
        };
    }
    FactorGraphModel::new(nodes, model.layout().clone())
}

/// A model together with one of its reparameterizations.
///
/// Sampler coordinates: for each latent node of the original model, in
/// topological order, a block holding `z_j` (CP) or `ε_j` (DNCP).
#[derive(Clone, Debug)]
pub struct Reparameterized {
    pub original: FactorGraphModel,
    pub plan: ParameterizationPlan,
    pub transformed: FactorGraphModel,
    aux_of: BTreeMap<NodeId, NodeId>,
    latents: Vec<NodeId>,
    coords: Vec<NodeId>,
}

impl Reparameterized {
    pub fn new(model: &FactorGraphModel, plan: ParameterizationPlan) -> Result<Self> {
        let transformed = apply_plan(model, &plan)?;
        let mut aux_of = BTreeMap::new();
        for node in plan.dncp.keys() {
            let name = aux_name(&model.node(*node).name);
            aux_of.insert(*node, transformed.require(&name)?);
        }
        let latents = model.latent_nodes();
        let coords = latents.iter().map(|n| aux_of.get(n).copied().unwrap_or(*n)).collect();
        Ok(Reparameterized {
            original: model.clone(),
            plan,
            transformed,
            aux_of,
            latents,
            coords,
        })
    }

    pub fn centered(model: &FactorGraphModel) -> Result<Self> {
        Self::new(model, ParameterizationPlan::empty())
    }

    pub fn non_centered(model: &FactorGraphModel) -> Result<Self> {
        Self::new(model, ParameterizationPlan::all_dncp(model)?)
    }

    pub fn aux_of(&self, node: NodeId) -> Option<NodeId> {
        self.aux_of.get(&node).copied()
    }

    /// Latent nodes of the original model, in topological order.
    pub fn latents(&self) -> &[NodeId] {
        &self.latents
    }

    /// Free nodes of the transformed model matching [`latents`](Self::latents) blockwise.
    pub fn coord_nodes(&self) -> &[NodeId] {
        &self.coords
    }

    pub fn num_coords(&self) -> usize {
        self.original.dim_of(&self.latents)
    }

    /// Forward pass: values of the original model's nodes from an assignment
    /// of the transformed model (auxiliary roots, CP latents, observations).
    pub fn z_from_eps(&self, theta: &[f64], eps: &Assignment) -> Result<Assignment> {
        let full = complete_assignment(&self.transformed, theta, eps)?;
        let mut out = Assignment::new();
        for i in 0..self.original.num_nodes() {
            let n = NodeId(i);
            if let Some(v) = full.get(n) {
                if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "node `{}` evaluates to {bad}",
                        self.original.node(n).name
                    )));
                }
                out.set(n, v.to_vec());
            }
        }
        Ok(out)
    }

    /// Inverse pass: transformed-model assignment from original-model values.
    pub fn eps_from_z(&self, theta: &[f64], z: &Assignment) -> Result<Assignment> {
        let full = complete_assignment(&self.original, theta, z)?;
        let mut out = Assignment::new();
        for &n in self.original.topo_order() {
            let Some(v) = full.get(n) else { continue };
            match self.plan.transform(n) {
                Some(t) => {
                    let input = node_link_input(&self.original, n, &full)?;
                    let e = t.inverse(&self.original, theta, &input, v)?;
                    out.set(self.aux_of[&n], e);
                    out.set(n, v.to_vec());
                }
                None => out.set(n, v.to_vec()),
            }
        }
        Ok(out)
    }

    /// Flat coordinates from flat latent values (both in [`latents`](Self::latents) order).
    pub fn coords_from_z(&self, theta: &[f64], z_flat: &[f64], observed: &Assignment) -> Result<Vec<f64>> {
        let mut a = observed.clone();
        a.scatter(&self.original, &self.latents, z_flat);
        let e = self.eps_from_z(theta, &a)?;
        e.flatten(&self.transformed, &self.coords)
    }

    /// Flat latent values from flat coordinates.
    pub fn z_from_coords(&self, theta: &[f64], coords: &[f64], observed: &Assignment) -> Result<Vec<f64>> {
        let mut a = observed.clone();
        a.scatter(&self.transformed, &self.coords, coords);
        let z = self.z_from_eps(theta, &a)?;
        z.flatten(&self.original, &self.latents)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ancestral_sample, build_model, log_joint, ModelSpec, ParamLayout, TensorSource};
    use crate::rng::seeded;
    use rand::Rng;

    fn gaussian_factor(scale: f64, link: LinkFn) -> ConditionalFactor {
        ConditionalFactor {
            family: Family::Gaussian {
                scale: ScaleSource::Fixed(scale),
            },
            link,
        }
    }

    #[test]
    fn location_scale_hand_example() {
        let t = ScalarTransform::Normal;
        assert_eq!(t.g(0.0, 2.0, 1.5), 3.0);
        assert_eq!(t.g_inv(0.0, 2.0, 3.0).unwrap(), 1.5);
        assert_eq!(t.g(0.7, 2.0, 0.0), 0.7);
    }

    #[test]
    fn zero_scale_is_rejected() {
        let f = gaussian_factor(0.0, LinkFn::Identity);
        assert!(matches!(
            location_scale_transform(NodeId(0), &f),
            Err(Error::ZeroScale(_))
        ));
    }

    #[test]
    fn exponential_hand_example() {
        let t = ScalarTransform::Exponential;
        let e = 1.0 - (-1.0f64).exp();
        assert!((t.g(0.0, 1.0, e) - 1.0).abs() < 1e-12);
        assert!(t.g(0.0, 1.0, 1e-300) > 0.0);
        assert!(t.g(0.0, 1.0, 1e-300) < 1e-290);
        assert!(matches!(t.g_inv(0.0, 1.0, -0.5), Err(Error::NonInvertible(_))));
    }

    #[test]
    fn lognormal_hand_example() {
        assert_eq!(ScalarTransform::LogNormal.g(0.0, 1.0, 0.0), 1.0);
    }

    #[test]
    fn change_of_variables_and_round_trip() {
        let mut rng = seeded(5);
        for kind in [
            ScalarTransform::Normal,
            ScalarTransform::Uniform,
            ScalarTransform::Exponential,
            ScalarTransform::LogNormal,
        ] {
            for _ in 0..1000 {
                let m = rng.random_range(-2.0..2.0);
                let s = rng.random_range(0.05..3.0);
                let e = match kind.noise() {
                    NoiseDist::StandardNormal => rng.random_range(-3.0..3.0),
                    NoiseDist::UnitUniform => rng.random_range(0.001..0.999),
                };
                let z = kind.g(m, s, e);
                let lhs = kind.noise_log_pdf(e);
                let rhs = kind.cp_log_pdf(m, s, z) + kind.log_abs_det(m, s, e);
                assert!((lhs - rhs).abs() < 1e-9, "{kind:?} m={m} s={s} e={e}");
                let back = kind.g_inv(m, s, z).unwrap();
                assert!((back - e).abs() < 1e-10 * (1.0 + e.abs()), "{kind:?}");
            }
        }
    }

    fn lds_like() -> FactorGraphModel {
        let src = r#"
[[nodes]]
name = "z1"
kind = "latent"
dim = 1
family = "gaussian"
scale = 1.0
[[nodes]]
name = "z2"
kind = "latent"
dim = 1
parents = ["z1"]
family = "gaussian"
scale = 0.5
[[nodes]]
name = "x1"
kind = "observed"
dim = 1
parents = ["z1"]
family = "gaussian"
scale = 1.0
[[nodes]]
name = "x2"
kind = "observed"
dim = 1
parents = ["z2"]
family = "gaussian"
scale = 1.0
"#;
        build_model(&ModelSpec::from_toml(src).unwrap()).unwrap()
    }

    #[test]
    fn chain_forward_and_inverse_by_hand() {
        let m = lds_like();
        let r = Reparameterized::non_centered(&m).unwrap();
        let z1 = m.find("z1").unwrap();
        let z2 = m.find("z2").unwrap();
        let mut e = Assignment::new();
        e.set(r.aux_of(z1).unwrap(), vec![1.0]);
        e.set(r.aux_of(z2).unwrap(), vec![1.0]);
        let z = r.z_from_eps(&[], &e).unwrap();
        assert_eq!(z.get(z1).unwrap(), &[1.0]);
        assert_eq!(z.get(z2).unwrap(), &[1.5]);
        let back = r.eps_from_z(&[], &z).unwrap();
        assert_eq!(back.get(r.aux_of(z2).unwrap()).unwrap(), &[1.0]);
    }

    #[test]
    fn structure_after_plan() {
        let m = lds_like();
        let r = Reparameterized::non_centered(&m).unwrap();
        assert_eq!(r.transformed.num_nodes(), 6);
        assert_eq!(r.transformed.auxiliary_nodes().len(), 2);
        assert_eq!(r.transformed.deterministic_nodes().len(), 2);
        for a in r.transformed.auxiliary_nodes() {
            assert!(r.transformed.node(a).parents.is_empty());
        }
        let empty = apply_plan(&m, &ParameterizationPlan::empty()).unwrap();
        assert_eq!(empty, m);
    }

    #[test]
    fn transformed_joint_factorizes() {
        let m = lds_like();
        let r = Reparameterized::non_centered(&m).unwrap();
        let mut rng = seeded(9);
        for _ in 0..100 {
            let a = ancestral_sample(&r.transformed, &[], &mut rng).unwrap();
            let lj = log_joint(&r.transformed, &[], &a).unwrap();
            let z = r.z_from_eps(&[], &a).unwrap();
            let mut direct = 0.0;
            for x in m.observed_nodes() {
                direct += crate::graph::factor_log_density(&m, &[], x, &z).unwrap();
            }
            for aux in r.transformed.auxiliary_nodes() {
                let v = a.get(aux).unwrap()[0];
                direct += NoiseDist::StandardNormal.log_pdf(v);
            }
            assert!((lj - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn mixed_plan_round_trip() {
        let m = lds_like();
        let z2 = m.find("z2").unwrap();
        let plan = ParameterizationPlan::for_nodes(&m, &[z2]).unwrap();
        let r = Reparameterized::new(&m, plan).unwrap();
        let obs = Assignment::new();
        let z = vec![0.3, -1.2];
        let c = r.coords_from_z(&[], &z, &obs).unwrap();
        assert!((c[0] - 0.3).abs() < 1e-15);
        assert!((c[1] - (-1.5) / 0.5).abs() < 1e-12);
        let back = r.z_from_coords(&[], &c, &obs).unwrap();
        assert!((back[1] - z[1]).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_has_no_transform() {
        let mut layout = ParamLayout::new();
        layout.push("unused", vec![1]).unwrap();
        let f = ConditionalFactor {
            family: Family::Bernoulli,
            link: LinkFn::Constant(TensorSource::Fixed(vec![0.0])),
        };
        assert!(matches!(
            location_scale_transform(NodeId(0), &f),
            Err(Error::UnsupportedFamily(_))
        ));
        assert!(matches!(
            inverse_cdf_transform(NodeId(0), &f),
            Err(Error::UnsupportedFamily(_))
        ));
        assert!(matches!(
            composition_transform(NodeId(0), &f),
            Err(Error::UnsupportedFamily(_))
        ));
    }
}
