//! Posterior correlation analysis: Hessians of the log-joint, pairwise
//! squared correlations, the CP/DNCP closed forms and their limits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Assignment, FactorGraphModel, FactorSelection, LogJointGraph, NodeId};
use crate::reparam::Reparameterized;
use crate::zoo::build_lds_model;

pub type Matrix = Vec<Vec<f64>>;

/// Gradient step used for finite-difference Hessians.
pub const HESSIAN_STEP: f64 = 1e-4;

/// Central-difference Hessian of the log-joint over `nodes` (flattened in the
/// given order), symmetrized. `point` must assign every non-deterministic node.
pub fn hessian_wrt(model: &FactorGraphModel, theta: &[f64], point: &Assignment, nodes: &[NodeId]) -> Result<Matrix> {
    let mut g = LogJointGraph::compile(model, FactorSelection::All)?;
    g.bind_theta(theta)?;
    g.bind_assignment(point)?;
    let x0 = point.flatten(model, nodes)?;
    let n = x0.len();
    let mut h = vec![vec![0.0; n]; n];
    let mut x = x0.clone();
    let mut up = vec![0.0; n];
    let mut down = vec![0.0; n];
    for i in 0..n {
        x[i] = x0[i] + HESSIAN_STEP;
        g.bind_flat(nodes, &x)?;
        g.value_and_grad()?;
        g.flat_grad_into(nodes, &mut up);
        x[i] = x0[i] - HESSIAN_STEP;
        g.bind_flat(nodes, &x)?;
        g.value_and_grad()?;
        g.flat_grad_into(nodes, &mut down);
        x[i] = x0[i];
        for j in 0..n {
            h[i][j] = (up[j] - down[j]) / (2.0 * HESSIAN_STEP);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = s;
            h[j][i] = s;
        }
    }
    if h.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Hessian entry".into()));
    }
    Ok(h)
}

/// Hessian over the model's free nodes in topological order.
pub fn hessian_log_posterior(model: &FactorGraphModel, theta: &[f64], point: &Assignment) -> Result<Matrix> {
    hessian_wrt(model, theta, point, &model.free_nodes())
}

/// Hessian in the sampler coordinates of a reparameterization.
pub fn hessian_in_coords(rep: &Reparameterized, theta: &[f64], point: &Assignment) -> Result<Matrix> {
    hessian_wrt(&rep.transformed, theta, point, rep.coord_nodes())
}

/// `H_ij² / (H_ii H_jj)`. The 2×2 block on `{i, j}` must be negative
/// semi-definite with negative diagonal; a singular block gives 1.
pub fn squared_correlation_from_hessian(h: &Matrix, i: usize, j: usize) -> Result<f64> {
    let (a, b, c) = (h[i][i], h[j][j], h[i][j]);
    if !(a < 0.0 && b < 0.0) {
        return Err(Error::NotNegativeDefinite);
    }
    let r = c * c / (a * b);
    if r > 1.0 + 1e-12 {
        return Err(Error::NotNegativeDefinite);
    }
    Ok(r.min(1.0))
}

/// True when the `{i, j}` block is singular to relative tolerance `tol`.
pub fn is_singular_pair(h: &Matrix, i: usize, j: usize, tol: f64) -> bool {
    let det = h[i][i] * h[j][j] - h[i][j] * h[i][j];
    det.abs() <= tol * (h[i][i] * h[j][j]).abs()
}

/// Local second-order summary of a latent `z` with parent `y_i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalFactorSummary {
    /// Curvature, in `y_i`, of every factor except `z`'s own.
    pub alpha: f64,
    /// Curvature, in `z`, of the factors of `z`'s children.
    pub beta: f64,
    /// Link weight of `y_i` in `z`'s mean.
    pub w: f64,
    /// Conditional scale of `z`.
    pub sigma: f64,
}

impl LocalFactorSummary {
    pub fn new(alpha: f64, beta: f64, w: f64, sigma: f64) -> Self {
        LocalFactorSummary { alpha, beta, w, sigma }
    }

    fn check(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::Domain(format!("sigma = {} must be positive", self.sigma)));
        }
        if !(self.alpha < 0.0) || !(self.beta < 0.0) {
            return Err(Error::Domain(format!(
                "need alpha < 0 and beta < 0, got alpha = {}, beta = {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    /// CP Hessian block over `(y_i, z)`.
    pub fn cp_hessian(&self) -> Matrix {
        let s2 = self.sigma * self.sigma;
        vec![
            vec![self.alpha - self.w * self.w / s2, self.w / s2],
            vec![self.w / s2, self.beta - 1.0 / s2],
        ]
    }

    /// DNCP Hessian block over `(y_i, ε)`.
    pub fn dncp_hessian(&self) -> Matrix {
        let s = self.sigma;
        vec![
            vec![self.alpha + self.w * self.w * self.beta, s * self.w * self.beta],
            vec![s * self.w * self.beta, s * s * self.beta - 1.0],
        ]
    }
}

/// `(w²/σ⁴) / ((α − w²/σ²)(β − 1/σ²))`.
pub fn cp_squared_correlation(s: &LocalFactorSummary) -> Result<f64> {
    s.check()?;
    let s2 = s.sigma * s.sigma;
    let w2 = s.w * s.w;
    let den = (s.alpha - w2 / s2) * (s.beta - 1.0 / s2);
    if !(den > 0.0) {
        return Err(Error::Domain(format!("CP denominator {den}")));
    }
    Ok((w2 / (s2 * s2)) / den)
}

/// `σ²w²β² / ((α + w²β)(σ²β − 1))`.
pub fn dncp_squared_correlation(s: &LocalFactorSummary) -> Result<f64> {
    s.check()?;
    let s2 = s.sigma * s.sigma;
    let w2 = s.w * s.w;
    let den = (s.alpha + w2 * s.beta) * (s2 * s.beta - 1.0);
    if !(den > 0.0) {
        return Err(Error::Domain(format!("DNCP denominator {den}")));
    }
    Ok(s2 * w2 * s.beta * s.beta / den)
}

/// DNCP has strictly smaller squared correlation iff `σ⁻² > −β`.
pub fn prefer_dncp(sigma: f64, beta: f64) -> Result<bool> {
    if !(beta < 0.0) {
        return Err(Error::Sign(format!("beta = {beta} must be negative")));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma = {sigma} must be positive")));
    }
    Ok(1.0 / (sigma * sigma) > -beta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Limit {
    SigmaToZero,
    SigmaToInf,
    BetaToZero,
    BetaToNegInf,
    AlphaToZero,
    AlphaToNegInf,
}

impl Limit {
    pub const ALL: [Limit; 6] = [
        Limit::SigmaToZero,
        Limit::SigmaToInf,
        Limit::BetaToZero,
        Limit::BetaToNegInf,
        Limit::AlphaToZero,
        Limit::AlphaToNegInf,
    ];

    /// Summary with the limiting variable replaced by `10^±k`.
    pub fn approach(self, s: &LocalFactorSummary, k: i32) -> LocalFactorSummary {
        let small = 10f64.powi(-k);
        let big = 10f64.powi(k);
        let mut t = *s;
        match self {
            Limit::SigmaToZero => t.sigma = small,
            Limit::SigmaToInf => t.sigma = big,
            Limit::BetaToZero => t.beta = -small,
            Limit::BetaToNegInf => t.beta = -big,
            Limit::AlphaToZero => t.alpha = -small,
            Limit::AlphaToNegInf => t.alpha = -big,
        }
        t
    }
}

/// Closed-form limits `(cp, dncp)` of the squared correlations.
pub fn limiting_table(s: &LocalFactorSummary, which: Limit) -> (f64, f64) {
    let (a, b, w2, s2) = (s.alpha, s.beta, s.w * s.w, s.sigma * s.sigma);
    match which {
        Limit::SigmaToZero => (1.0, 0.0),
        Limit::SigmaToInf => (0.0, b * w2 / (b * w2 + a)),
        Limit::BetaToZero => (w2 / (w2 - a * s2), 0.0),
        Limit::BetaToNegInf => (0.0, 1.0),
        Limit::AlphaToZero => (1.0 / (1.0 - b * s2), b * s2 / (b * s2 - 1.0)),
        Limit::AlphaToNegInf => (0.0, 0.0),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rho_sq_cp: f64,
    pub rho_sq_dncp: f64,
    pub prefer_dncp: bool,
    pub hessian_cp: Matrix,
    pub hessian_dncp: Matrix,
    /// Largest entrywise gap between the closed-form and finite-difference Hessians.
    pub fd_discrepancy: f64,
}

/// Closed-form CP Hessian of the two-step linear-Gaussian chain over `(z1, z2)`.
pub fn lds_hessian_cp(sigma_x: f64, sigma_z: f64) -> Matrix {
    let (ix, iz) = (1.0 / (sigma_x * sigma_x), 1.0 / (sigma_z * sigma_z));
    vec![vec![-1.0 - ix - iz, iz], vec![iz, -ix - iz]]
}

/// Closed-form DNCP Hessian over `(ε1, ε2)` with `z1 = ε1`, `z2 = z1 + σ_z ε2`.
pub fn lds_hessian_dncp(sigma_x: f64, sigma_z: f64) -> Matrix {
    let ix = 1.0 / (sigma_x * sigma_x);
    vec![
        vec![-1.0 - 2.0 * ix, -sigma_z * ix],
        vec![-sigma_z * ix, -1.0 - sigma_z * sigma_z * ix],
    ]
}

/// Relative tolerance below which two squared correlations count as equal.
const TIE_TOL: f64 = 1e-12;

pub fn lds_correlations(sigma_x: f64, sigma_z: f64) -> Result<CorrelationReport> {
    if !(sigma_x > 0.0 && sigma_z > 0.0) {
        return Err(Error::Domain("LDS scales must be positive".into()));
    }
    let model = build_lds_model(sigma_x, sigma_z)?;
    let hc = lds_hessian_cp(sigma_x, sigma_z);
    let hd = lds_hessian_dncp(sigma_x, sigma_z);

    // The log-joint is quadratic, so any evaluation point will do.
    let mut point = Assignment::new();
    for n in model.topo_order() {
        point.set(*n, vec![0.0; model.node(*n).dim]);
    }
    let cp = Reparameterized::centered(&model)?;
    let dncp = Reparameterized::non_centered(&model)?;
    let fd_c = hessian_in_coords(&cp, &[], &point)?;
    let eps_point = dncp.eps_from_z(&[], &point)?;
    let fd_d = hessian_in_coords(&dncp, &[], &eps_point)?;
    let mut gap: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            gap = gap.max((fd_c[i][j] - hc[i][j]).abs());
            gap = gap.max((fd_d[i][j] - hd[i][j]).abs());
        }
    }
    let rc = squared_correlation_from_hessian(&hc, 0, 1)?;
    let rd = squared_correlation_from_hessian(&hd, 0, 1)?;
    Ok(CorrelationReport {
        rho_sq_cp: rc,
        rho_sq_dncp: rd,
        prefer_dncp: rc - rd > TIE_TOL * rc.max(rd),
        hessian_cp: hc,
        hessian_dncp: hd,
        fd_discrepancy: gap,
    })
}

/// `Σ = −H⁻¹` for a symmetric negative-definite `H` (Cholesky of `−H`).
pub fn covariance_from_hessian(h: &Matrix) -> Result<Matrix> {
    let n = h.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = -h[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::NotNegativeDefinite);
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    // invert L, then Σ = L⁻ᵀ L⁻¹
    let mut li = vec![vec![0.0; n]; n];
    for i in 0..n {
        li[i][i] = 1.0 / l[i][i];
        for j in 0..i {
            let mut s = 0.0;
            for k in j..i {
                s -= l[i][k] * li[k][j];
            }
            li[i][j] = s / l[i][i];
        }
    }
    let mut cov = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            cov[i][j] = (i.max(j)..n).map(|k| li[k][i] * li[k][j]).sum();
        }
    }
    Ok(cov)
}
