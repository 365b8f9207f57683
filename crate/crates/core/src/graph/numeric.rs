//! Plain (non-differentiable) evaluation of links, factor log-densities and
//! ancestral sampling. This path shares no code with the expression-graph
//! compiler, so the two cross-check each other in tests.

use rand::Rng;
use rand_distr::{Exp1, Open01, StandardNormal};

use super::{
    Assignment, DeterministicFn, FactorGraphModel, Family, LinkFn, NodeId, ParamLayout, ScaleSource, TensorSource,
};
use crate::autodiff::{log_sigmoid, SIGMA_FLOOR};
use crate::error::{Error, Result};
use crate::rng::SimRng;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

pub fn tensor_values<'a>(src: &'a TensorSource, theta: &'a [f64], layout: &ParamLayout) -> &'a [f64] {
    match src {
        TensorSource::Param(p) => layout.slice(*p, theta),
        TensorSource::Fixed(v) => v,
    }
}

pub fn eval_link(link: &LinkFn, theta: &[f64], layout: &ParamLayout, input: &[f64]) -> Vec<f64> {
    match link {
        LinkFn::Constant(t) => tensor_values(t, theta, layout).to_vec(),
        LinkFn::Identity => input.to_vec(),
        LinkFn::Affine {
            activation,
            weight,
            bias,
        } => {
            let w = tensor_values(weight, theta, layout);
            let din = input.len();
            let dout = w.len() / din;
            let b = bias.as_ref().map(|b| tensor_values(b, theta, layout));
            (0..dout)
                .map(|r| {
                    let mut s: f64 = w[r * din..(r + 1) * din].iter().zip(input).map(|(a, x)| a * x).sum();
                    if let Some(b) = b {
                        s += b[r];
                    }
                    activation.apply(s)
                })
                .collect()
        }
        LinkFn::Compose(stages) => {
            let mut v = input.to_vec();
            for s in stages {
                v = eval_link(s, theta, layout, &v);
            }
            v
        }
    }
}

/// Per-coordinate scale values (a fixed scale or `exp` of a log-scale
/// parameter broadcast to `dim`).
pub fn scale_values(scale: &ScaleSource, theta: &[f64], layout: &ParamLayout, dim: usize) -> Vec<f64> {
    match scale {
        ScaleSource::Fixed(s) => vec![*s; dim],
        ScaleSource::LogParam(p) => {
            let v = layout.slice(*p, theta);
            if v.len() == 1 {
                vec![v[0].exp(); dim]
            } else {
                v.iter().map(|x| x.exp()).collect()
            }
        }
    }
}

/// Concatenated values of the parents the link function sees.
pub fn node_link_input(model: &FactorGraphModel, node: NodeId, a: &Assignment) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for p in model.node(node).link_parents() {
        out.extend_from_slice(a.require(model, *p)?);
    }
    Ok(out)
}

fn link_of(model: &FactorGraphModel, theta: &[f64], node: NodeId, a: &Assignment) -> Result<Vec<f64>> {
    let input = node_link_input(model, node, a)?;
    Ok(eval_link(&model.node(node).factor.link, theta, model.layout(), &input))
}

fn deterministic_value(
    model: &FactorGraphModel,
    theta: &[f64],
    node: NodeId,
    f: &DeterministicFn,
    a: &Assignment,
) -> Result<Vec<f64>> {
    let spec = model.node(node);
    let m = link_of(model, theta, node, a)?;
    let eps = match spec.noise_parent() {
        Some(e) => a.require(model, e)?.to_vec(),
        None => Vec::new(),
    };
    Ok(match f {
        DeterministicFn::Link => m,
        DeterministicFn::LocationScale { scale } => {
            let s = scale_values(scale, theta, model.layout(), spec.dim);
            (0..spec.dim).map(|k| m[k] + s[k] * eps[k]).collect()
        }
        DeterministicFn::LogNormal { scale } => {
            let s = scale_values(scale, theta, model.layout(), spec.dim);
            (0..spec.dim).map(|k| (m[k] + s[k] * eps[k]).exp()).collect()
        }
        DeterministicFn::ExponentialInverseCdf => (0..spec.dim).map(|k| -(-eps[k]).ln_1p() * (-m[k]).exp()).collect(),
    })
}

/// Fill in every deterministic node from its parents, in topological order.
/// Existing deterministic values are overwritten.
pub fn complete_assignment(model: &FactorGraphModel, theta: &[f64], a: &Assignment) -> Result<Assignment> {
    model.layout().check_theta(theta)?;
    let mut out = a.clone();
    for &n in model.topo_order() {
        if let Family::Deterministic(f) = &model.node(n).factor.family {
            let v = deterministic_value(model, theta, n, f, &out)?;
            out.set(n, v);
        }
    }
    Ok(out)
}

fn gaussian_lp(x: f64, m: f64, s: f64) -> f64 {
    let s = s.max(SIGMA_FLOOR);
    let r = (x - m) / s;
    -0.5 * r * r - s.ln() - HALF_LN_2PI
}

/// `log p(v_j | pa_j)` for one node. `a` must already hold deterministic values.
pub fn factor_log_density(model: &FactorGraphModel, theta: &[f64], node: NodeId, a: &Assignment) -> Result<f64> {
    let spec = model.node(node);
    let x = a.require(model, node)?;
    let layout = model.layout();
    let lp = match &spec.factor.family {
        Family::Deterministic(_) => 0.0,
        Family::StandardNormalAux => x.iter().map(|v| gaussian_lp(*v, 0.0, 1.0)).sum(),
        Family::UniformAux => {
            if x.iter().all(|v| (0.0..=1.0).contains(v)) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
        Family::Gaussian { scale } => {
            let m = link_of(model, theta, node, a)?;
            let s = scale_values(scale, theta, layout, spec.dim);
            (0..spec.dim).map(|k| gaussian_lp(x[k], m[k], s[k])).sum()
        }
        Family::LogNormal { scale } => {
            let m = link_of(model, theta, node, a)?;
            let s = scale_values(scale, theta, layout, spec.dim);
            if x.iter().any(|v| *v <= 0.0) {
                f64::NEG_INFINITY
            } else {
                (0..spec.dim)
                    .map(|k| gaussian_lp(x[k].ln(), m[k], s[k]) - x[k].ln())
                    .sum()
            }
        }
        Family::Uniform { width } => {
            let lo = link_of(model, theta, node, a)?;
            let w = scale_values(width, theta, layout, spec.dim);
            if (0..spec.dim).all(|k| x[k] >= lo[k] && x[k] <= lo[k] + w[k]) {
                -w.iter().map(|v| v.ln()).sum::<f64>()
            } else {
                f64::NEG_INFINITY
            }
        }
        Family::Exponential => {
            let eta = link_of(model, theta, node, a)?;
            if x.iter().any(|v| *v < 0.0) {
                f64::NEG_INFINITY
            } else {
                (0..spec.dim).map(|k| eta[k] - eta[k].exp() * x[k]).sum()
            }
        }
        Family::Bernoulli => {
            let logits = link_of(model, theta, node, a)?;
            (0..spec.dim)
                .map(|k| x[k] * log_sigmoid(logits[k]) + (1.0 - x[k]) * log_sigmoid(-logits[k]))
                .sum()
        }
    };
    Ok(lp)
}

/// One `(node, log-factor)` pair per node, in topological order.
pub fn log_joint_terms(model: &FactorGraphModel, theta: &[f64], a: &Assignment) -> Result<Vec<(NodeId, f64)>> {
    let full = complete_assignment(model, theta, a)?;
    model
        .topo_order()
        .iter()
        .map(|n| Ok((*n, factor_log_density(model, theta, *n, &full)?)))
        .collect()
}

/// `Σ_j log p_θ(v_j | pa_j)`; deterministic nodes contribute nothing.
pub fn log_joint(model: &FactorGraphModel, theta: &[f64], a: &Assignment) -> Result<f64> {
    let total: f64 = log_joint_terms(model, theta, a)?.iter().map(|t| t.1).sum();
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("log-joint is {total}")));
    }
    Ok(total)
}

/// Draw every node in topological order: roots from their marginals,
/// deterministic nodes by evaluation, stochastic children from their
/// conditionals.
pub fn ancestral_sample(model: &FactorGraphModel, theta: &[f64], rng: &mut SimRng) -> Result<Assignment> {
    model.layout().check_theta(theta)?;
    let layout = model.layout();
    let mut a = Assignment::new();
    for &n in model.topo_order() {
        let spec = model.node(n);
        let d = spec.dim;
        let v: Vec<f64> = match &spec.factor.family {
            Family::Deterministic(f) => deterministic_value(model, theta, n, f, &a)?,
            Family::StandardNormalAux => (0..d).map(|_| rng.sample(StandardNormal)).collect(),
            Family::UniformAux => (0..d).map(|_| rng.sample(Open01)).collect(),
            Family::Gaussian { scale } => {
                let m = link_of(model, theta, n, &a)?;
                let s = scale_values(scale, theta, layout, d);
                (0..d)
                    .map(|k| m[k] + s[k] * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
            Family::LogNormal { scale } => {
                let m = link_of(model, theta, n, &a)?;
                let s = scale_values(scale, theta, layout, d);
                (0..d)
                    .map(|k| (m[k] + s[k] * rng.sample::<f64, _>(StandardNormal)).exp())
                    .collect()
            }
            Family::Uniform { width } => {
                let lo = link_of(model, theta, n, &a)?;
                let w = scale_values(width, theta, layout, d);
                (0..d).map(|k| lo[k] + w[k] * rng.random::<f64>()).collect()
            }
            Family::Exponential => {
                let eta = link_of(model, theta, n, &a)?;
                (0..d).map(|k| rng.sample::<f64, _>(Exp1) / eta[k].exp()).collect()
            }
            Family::Bernoulli => {
                let logits = link_of(model, theta, n, &a)?;
                (0..d)
                    .map(|k| {
                        let p = crate::autodiff::sigmoid(logits[k]);
                        if rng.random::<f64>() < p {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
        };
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("sampled {bad} for node `{}`", spec.name)));
        }
        a.set(n, v);
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ConditionalFactor, NodeKind, NodeSpec};
    use crate::rng::seeded;

    fn node(name: &str, kind: NodeKind, parents: Vec<usize>, family: Family, link: LinkFn) -> NodeSpec {
        NodeSpec {
            name: name.into(),
            kind,
            dim: 1,
            parents: parents.into_iter().map(NodeId).collect(),
            factor: ConditionalFactor { family, link },
        }
    }

    fn chain() -> FactorGraphModel {
        let z = node(
            "z",
            NodeKind::Latent,
            vec![],
            Family::Gaussian {
                scale: ScaleSource::Fixed(1.0),
            },
            LinkFn::Constant(TensorSource::Fixed(vec![0.0])),
        );
        let x = node(
            "x",
            NodeKind::Observed,
            vec![0],
            Family::Gaussian {
                scale: ScaleSource::Fixed(0.5),
            },
            LinkFn::Identity,
        );
        FactorGraphModel::new(vec![z, x], ParamLayout::new()).unwrap()
    }

    #[test]
    fn standard_normal_sample_mean() {
        let m = chain();
        let mut rng = seeded(11);
        let n = 100_000;
        let mut s = 0.0;
        for _ in 0..n {
            s += ancestral_sample(&m, &[], &mut rng).unwrap().get(NodeId(0)).unwrap()[0];
        }
        assert!((s / n as f64).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn log_joint_matches_hand_value() {
        let m = chain();
        let mut a = Assignment::new();
        a.set(NodeId(0), vec![0.5]);
        a.set(NodeId(1), vec![1.0]);
        let want = (-0.125 - HALF_LN_2PI) + (-0.5 - 0.5f64.ln() - HALF_LN_2PI);
        assert!((log_joint(&m, &[], &a).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn zero_scale_forward_pass_is_the_mean() {
        let z = node(
            "z",
            NodeKind::Latent,
            vec![],
            Family::Gaussian {
                scale: ScaleSource::Fixed(0.0),
            },
            LinkFn::Constant(TensorSource::Fixed(vec![2.5])),
        );
        let m = FactorGraphModel::new(vec![z], ParamLayout::new()).unwrap();
        let a = ancestral_sample(&m, &[], &mut seeded(1)).unwrap();
        assert_eq!(a.get(NodeId(0)).unwrap(), &[2.5]);
    }

    #[test]
    fn support_violation_is_non_finite() {
        let e = node(
            "e",
            NodeKind::Latent,
            vec![],
            Family::Exponential,
            LinkFn::Constant(TensorSource::Fixed(vec![0.0])),
        );
        let m = FactorGraphModel::new(vec![e], ParamLayout::new()).unwrap();
        let mut a = Assignment::new();
        a.set(NodeId(0), vec![-1.0]);
        assert!(matches!(log_joint(&m, &[], &a), Err(Error::NonFinite(_))));
        a.set(NodeId(0), vec![2.0]);
        assert!((log_joint(&m, &[], &a).unwrap() + 2.0).abs() < 1e-12);
    }
}
