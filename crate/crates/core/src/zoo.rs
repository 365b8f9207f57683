//! Ready-made models used by the experiments and tests.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{
    Activation, ConditionalFactor, FactorGraphModel, Family, LinkFn, NodeId, NodeKind, NodeSpec, ParamId, ParamLayout,
    ScaleSource, TensorSource,
};
use crate::rng::SimRng;

struct Builder {
    nodes: Vec<NodeSpec>,
    layout: ParamLayout,
}

impl Builder {
    fn new() -> Self {
        Builder {
            nodes: Vec::new(),
            layout: ParamLayout::new(),
        }
    }

    fn param(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId> {
        self.layout.push(name, shape)
    }

    fn node(
        &mut self,
        name: &str,
        kind: NodeKind,
        dim: usize,
        parents: Vec<NodeId>,
        family: Family,
        link: LinkFn,
    ) -> NodeId {
        self.nodes.push(NodeSpec {
            name: name.to_string(),
            kind,
            dim,
            parents,
            factor: ConditionalFactor { family, link },
        });
        NodeId(self.nodes.len() - 1)
    }

    fn finish(self) -> Result<FactorGraphModel> {
        FactorGraphModel::new(self.nodes, self.layout)
    }
}

fn zeros(dim: usize) -> LinkFn {
    LinkFn::Constant(TensorSource::Fixed(vec![0.0; dim]))
}

fn gaussian(scale: f64) -> Family {
    Family::Gaussian {
        scale: ScaleSource::Fixed(scale),
    }
}

fn affine(activation: Activation, weight: ParamId, bias: Option<ParamId>) -> LinkFn {
    LinkFn::Affine {
        activation,
        weight: TensorSource::Param(weight),
        bias: bias.map(TensorSource::Param),
    }
}

/// `z1 ~ N(0,1)`, `x1 ~ N(z1, σx²)`, `z2 ~ N(z1, σz²)`, `x2 ~ N(z2, σx²)`.
pub fn build_lds_model(sigma_x: f64, sigma_z: f64) -> Result<FactorGraphModel> {
    if !(sigma_x > 0.0 && sigma_z > 0.0) {
        return Err(Error::Domain("LDS scales must be positive".into()));
    }
    let mut b = Builder::new();
    let z1 = b.node("z1", NodeKind::Latent, 1, vec![], gaussian(1.0), zeros(1));
    let z2 = b.node("z2", NodeKind::Latent, 1, vec![z1], gaussian(sigma_z), LinkFn::Identity);
    b.node(
        "x1",
        NodeKind::Observed,
        1,
        vec![z1],
        gaussian(sigma_x),
        LinkFn::Identity,
    );
    b.node(
        "x2",
        NodeKind::Observed,
        1,
        vec![z2],
        gaussian(sigma_x),
        LinkFn::Identity,
    );
    b.finish()
}

/// Dynamic Bayesian network:
/// `z_1 ~ N(0, I)`, `z_t | z_{t-1} ~ N(tanh(W_z z_{t-1} + b_z), σ_z² I)`,
/// `x_t ~ Bernoulli(sigmoid(W_x z_t))`.
///
/// With `emission_lag`, `x_t` (t ≥ 2) is emitted from `z_{t-1}` instead.
/// Parameters `w_z`, `b_z`, `w_x` are drawn from `N(0, 1)`.
pub fn build_dbn_model(
    t_len: usize,
    latent_dim: usize,
    obs_dim: usize,
    sigma_z: f64,
    emission_lag: bool,
    rng: &mut SimRng,
) -> Result<(FactorGraphModel, Vec<f64>)> {
    if t_len < 2 {
        return Err(Error::Domain(format!("DBN needs T >= 2, got {t_len}")));
    }
    let mut b = Builder::new();
    let wz = b.param("w_z", vec![latent_dim, latent_dim])?;
    let bz = b.param("b_z", vec![latent_dim])?;
    let wx = b.param("w_x", vec![obs_dim, latent_dim])?;
    let mut zs = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let z = if t == 0 {
            b.node(
                "z1",
                NodeKind::Latent,
                latent_dim,
                vec![],
                gaussian(1.0),
                zeros(latent_dim),
            )
        } else {
            b.node(
                &format!("z{}", t + 1),
                NodeKind::Latent,
                latent_dim,
                vec![zs[t - 1]],
                gaussian(sigma_z),
                affine(Activation::Tanh, wz, Some(bz)),
            )
        };
        zs.push(z);
    }
    for t in 0..t_len {
        let src = if emission_lag && t > 0 { zs[t - 1] } else { zs[t] };
        b.node(
            &format!("x{}", t + 1),
            NodeKind::Observed,
            obs_dim,
            vec![src],
            Family::Bernoulli,
            affine(Activation::Identity, wx, None),
        );
    }
    let model = b.finish()?;
    let theta = (0..model.num_params()).map(|_| StandardNormal.sample(rng)).collect();
    Ok((model, theta))
}

/// Layered generative model: `z_1 ~ N(0, σ_1² I)`,
/// `z_k | z_{k-1} ~ N(tanh(W_k z_{k-1} + b_k), σ_k² I)`,
/// `x ~ Bernoulli(sigmoid(W_x z_K + b_x))`. A layer with `σ_k = 0` is
/// deterministic (the root then sits at zero).
pub fn build_generative_mlp(dims: &[usize], obs_dim: usize, sigmas: &[f64]) -> Result<FactorGraphModel> {
    if dims.is_empty() || dims.len() != sigmas.len() {
        return Err(Error::Shape(format!(
            "{} layer dims but {} scales",
            dims.len(),
            sigmas.len()
        )));
    }
    let mut b = Builder::new();
    let mut prev: Option<NodeId> = None;
    for (k, (&d, &s)) in dims.iter().zip(sigmas).enumerate() {
        let name = format!("z{}", k + 1);
        let node = match prev {
            None => b.node(&name, NodeKind::Latent, d, vec![], gaussian(s), zeros(d)),
            Some(p) => {
                let w = b.param(&format!("w{}", k + 1), vec![d, dims[k - 1]])?;
                let bias = b.param(&format!("b{}", k + 1), vec![d])?;
                b.node(
                    &name,
                    NodeKind::Latent,
                    d,
                    vec![p],
                    gaussian(s),
                    affine(Activation::Tanh, w, Some(bias)),
                )
            }
        };
        prev = Some(node);
    }
    let last = *dims.last().expect("non-empty");
    let wx = b.param("w_x", vec![obs_dim, last])?;
    let bx = b.param("b_x", vec![obs_dim])?;
    b.node(
        "x",
        NodeKind::Observed,
        obs_dim,
        vec![prev.expect("non-empty")],
        Family::Bernoulli,
        affine(Activation::Identity, wx, Some(bx)),
    );
    b.finish()
}

/// `z ~ N(0, 1)`, `x ~ N(w z + b, exp(ls)²)` with parameters `w`, `b`, `ls`.
/// The marginal is `x ~ N(b, w² + exp(2 ls))`.
pub fn build_linear_gaussian_toy() -> Result<FactorGraphModel> {
    let mut b = Builder::new();
    let w = b.param("w", vec![1, 1])?;
    let bias = b.param("b", vec![1])?;
    let ls = b.param("ls", vec![1])?;
    let z = b.node("z", NodeKind::Latent, 1, vec![], gaussian(1.0), zeros(1));
    b.node(
        "x",
        NodeKind::Observed,
        1,
        vec![z],
        Family::Gaussian {
            scale: ScaleSource::LogParam(ls),
        },
        affine(Activation::Identity, w, Some(bias)),
    );
    b.finish()
}

/// Analytic `log p(x)` of [`build_linear_gaussian_toy`] at `theta = [w, b, ls]`.
pub fn linear_gaussian_log_marginal(theta: &[f64], x: f64) -> f64 {
    let (w, b, ls) = (theta[0], theta[1], theta[2]);
    let v = w * w + (2.0 * ls).exp();
    -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - b) * (x - b) / v)
}

/// Analytic `∇_θ log p(x)` of [`build_linear_gaussian_toy`].
pub fn linear_gaussian_log_marginal_grad(theta: &[f64], x: f64) -> [f64; 3] {
    let (w, b, ls) = (theta[0], theta[1], theta[2]);
    let s2 = (2.0 * ls).exp();
    let v = w * w + s2;
    let r = x - b;
    // d/dv of log p
    let dv = -0.5 / v + 0.5 * r * r / (v * v);
    [dv * 2.0 * w, r / v, dv * 2.0 * s2]
}

/// Single-latent models exercising each DNCP transform. The latent `z` has
/// the requested family and feeds a Gaussian observation `x ~ N(z, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformFamily {
    Gaussian,
    Uniform,
    Exponential,
    LogNormal,
}

impl TransformFamily {
    pub const ALL: [TransformFamily; 4] = [
        TransformFamily::Gaussian,
        TransformFamily::Uniform,
        TransformFamily::Exponential,
        TransformFamily::LogNormal,
    ];
}

/// Two-level chain `y ~ N(0,1)`, `z | y ~ family(link(y))`, `x ~ N(z, 1)`.
/// Links and scales are parameters: `m_w`, `m_b` for the link and `ls` for
/// the log-scale (log-width for the uniform).
pub fn build_transform_model(family: TransformFamily) -> Result<FactorGraphModel> {
    let mut b = Builder::new();
    let mw = b.param("m_w", vec![1, 1])?;
    let mb = b.param("m_b", vec![1])?;
    let y = b.node("y", NodeKind::Latent, 1, vec![], gaussian(1.0), zeros(1));
    let link = affine(Activation::Identity, mw, Some(mb));
    let fam = match family {
        TransformFamily::Gaussian => Family::Gaussian {
            scale: ScaleSource::LogParam(b.param("ls", vec![1])?),
        },
        TransformFamily::Uniform => Family::Uniform {
            width: ScaleSource::LogParam(b.param("ls", vec![1])?),
        },
        TransformFamily::Exponential => Family::Exponential,
        TransformFamily::LogNormal => Family::LogNormal {
            scale: ScaleSource::LogParam(b.param("ls", vec![1])?),
        },
    };
    let z = b.node("z", NodeKind::Latent, 1, vec![y], fam, link);
    b.node("x", NodeKind::Observed, 1, vec![z], gaussian(1.0), LinkFn::Identity);
    b.finish()
}
