//! Hamiltonian Monte Carlo in either parameterization, and the mixture
//! kernel that picks CP or DNCP coordinates afresh at every iteration.
//!
//! Mass matrix is the identity. Divergent trajectories are rejections.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ancestral_sample, Assignment, FactorGraphModel, FactorSelection, LogJointGraph, NodeId};
use crate::reparam::Reparameterized;
use crate::rng::{seeded, SimRng};

/// Step sizes below this abort the chain.
pub const MIN_STEP_SIZE: f64 = 1e-12;
const ADAPT_FACTOR: f64 = 1.02;

/// An unnormalized log-density with gradient.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Returns `log π(q)` and writes `∇ log π(q)` into `grad`.
    fn value_and_grad(&mut self, q: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// Log-joint of a model in the sampler coordinates of a reparameterization,
/// with parameters and observations held fixed.
pub struct ModelDensity {
    graph: LogJointGraph,
    nodes: Vec<NodeId>,
    observed_nodes: Vec<NodeId>,
    dim: usize,
}

impl ModelDensity {
    pub fn new(rep: &Reparameterized, theta: &[f64], observed: &Assignment) -> Result<Self> {
        let mut d = ModelDensity {
            graph: LogJointGraph::compile(&rep.transformed, FactorSelection::All)?,
            nodes: rep.coord_nodes().to_vec(),
            observed_nodes: rep.transformed.observed_nodes(),
            dim: rep.num_coords(),
        };
        d.rebind(theta, observed)?;
        Ok(d)
    }

    /// Replace the fixed parameters and observations.
    pub fn rebind(&mut self, theta: &[f64], observed: &Assignment) -> Result<()> {
        self.graph.bind_theta(theta)?;
        for &n in &self.observed_nodes {
            let v = observed
                .get(n)
                .ok_or_else(|| Error::InvalidModel(format!("observed node #{} has no value", n.0)))?;
            self.graph.bind_node(n, v)?;
        }
        Ok(())
    }

    /// `log p` at `q` with its gradient with respect to the parameters.
    pub fn theta_grad(&mut self, q: &[f64], out: &mut [f64]) -> Result<f64> {
        self.graph.bind_flat(&self.nodes, q)?;
        let v = self.graph.value_and_grad()?;
        self.graph.theta_grad_into(out);
        Ok(v)
    }
}

impl LogDensity for ModelDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_and_grad(&mut self, q: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.graph.bind_flat(&self.nodes, q)?;
        let v = self.graph.value_and_grad()?;
        self.graph.flat_grad_into(&self.nodes, grad);
        Ok(v)
    }
}

/// `N(mean, Λ⁻¹)` given the precision matrix `Λ`.
#[derive(Clone, Debug)]
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    pub precision: Vec<Vec<f64>>,
}

impl LogDensity for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn value_and_grad(&mut self, q: &[f64], grad: &mut [f64]) -> Result<f64> {
        let n = self.mean.len();
        let d: Vec<f64> = (0..n).map(|i| q[i] - self.mean[i]).collect();
        let mut v = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| self.precision[i][j] * d[j]).sum();
            grad[i] = -row;
            v -= 0.5 * d[i] * row;
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcConfig {
    pub leapfrog_steps: usize,
    pub initial_step_size: f64,
    pub target_accept_rate: f64,
    pub burn_in: usize,
    pub samples: usize,
    pub seed: u64,
    /// Probability of a CP move in the mixture kernel.
    pub mix_rho: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            leapfrog_steps: 10,
            initial_step_size: 0.1,
            target_accept_rate: 0.9,
            burn_in: 1000,
            samples: 4000,
            seed: 0,
            mix_rho: 0.5,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.leapfrog_steps == 0 {
            return Err(Error::Config("leapfrog_steps must be positive".into()));
        }
        if !(self.initial_step_size > 0.0) {
            return Err(Error::Config("initial_step_size must be positive".into()));
        }
        if !(self.target_accept_rate > 0.0 && self.target_accept_rate < 1.0) {
            return Err(Error::Config("target_accept_rate must lie in (0, 1)".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mix_rho) {
            return Err(Error::Config("mix_rho must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Coordinate system of a chain state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum System {
    /// Latent values `z` (CP).
    Z,
    /// Auxiliary values `ε` (DNCP).
    Eps,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    Cp,
    Dncp,
    Mix,
}

impl Parameterization {
    pub fn name(self) -> &'static str {
        match self {
            Parameterization::Cp => "cp",
            Parameterization::Dncp => "dncp",
            Parameterization::Mix => "mix",
        }
    }
}

/// `log_density` and `grad` are those of `coords` in `system`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub coords: Vec<f64>,
    pub system: System,
    pub log_density: f64,
    pub grad: Vec<f64>,
}

impl ChainState {
    pub fn new(coords: Vec<f64>, system: System, target: &mut dyn LogDensity) -> Result<Self> {
        let mut grad = vec![0.0; coords.len()];
        let log_density = target.value_and_grad(&coords, &mut grad)?;
        Ok(ChainState {
            coords,
            system,
            log_density,
            grad,
        })
    }
}

/// Half-kick / drift / half-kick integration for `n_steps`. On entry `grad`
/// holds `∇ log π(q)`; on exit `q`, `p`, `grad` are advanced and the new
/// `log π(q)` is returned.
pub fn leapfrog(
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    step: f64,
    n_steps: usize,
    target: &mut dyn LogDensity,
) -> Result<f64> {
    let mut lp = f64::NAN;
    for _ in 0..n_steps {
        for i in 0..q.len() {
            p[i] += 0.5 * step * grad[i];
            q[i] += step * p[i];
        }
        lp = target.value_and_grad(q, grad)?;
        for i in 0..q.len() {
            p[i] += 0.5 * step * grad[i];
        }
    }
    if !lp.is_finite() || p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("leapfrog trajectory diverged".into()));
    }
    Ok(lp)
}

/// One HMC transition. Returns whether the proposal was accepted; on
/// rejection (including divergence) the state is unchanged.
pub fn hmc_step(
    state: &mut ChainState,
    step: f64,
    n_steps: usize,
    target: &mut dyn LogDensity,
    rng: &mut SimRng,
) -> bool {
    let n = state.coords.len();
    let mut p: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let h0 = -state.log_density + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
    let mut q = state.coords.clone();
    let mut g = state.grad.clone();
    let u: f64 = rng.random();
    let lp = match leapfrog(&mut q, &mut p, &mut g, step, n_steps, target) {
        Ok(v) => v,
        Err(_) => return false,
    };
    let h1 = -lp + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
    let log_ratio = h0 - h1;
    if log_ratio.is_finite() && u.ln() < log_ratio {
        state.coords = q;
        state.grad = g;
        state.log_density = lp;
        true
    } else {
        false
    }
}

/// Multiplicative adaptation: `×1.02` on accept, `×1.02^(−t/(1−t))` on
/// reject, only while `iteration < burn_in`.
pub fn adapt_step_size(step: f64, accepted: bool, iteration: usize, config: &HmcConfig) -> Result<f64> {
    if iteration >= config.burn_in {
        return Ok(step);
    }
    let t = config.target_accept_rate;
    let next = if accepted {
        step * ADAPT_FACTOR
    } else {
        step * ADAPT_FACTOR.powf(-t / (1.0 - t))
    };
    if next < MIN_STEP_SIZE {
        return Err(Error::StepUnderflow(next));
    }
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    /// Post-burn-in draws in latent (`z`) coordinates, `samples × dim`.
    pub draws: Vec<Vec<f64>>,
    /// Per-iteration acceptance, burn-in included.
    pub accepted: Vec<bool>,
    /// Step size used at each iteration.
    pub step_sizes: Vec<f64>,
    /// Coordinate system used at each iteration.
    pub systems: Vec<System>,
    pub burn_in: usize,
}

impl ChainResult {
    pub fn accept_rate_after_burn_in(&self) -> f64 {
        let kept = &self.accepted[self.burn_in..];
        kept.iter().filter(|a| **a).count() as f64 / kept.len().max(1) as f64
    }

    /// Running acceptance rate over all iterations.
    pub fn accept_rate_trace(&self) -> Vec<f64> {
        let mut c = 0usize;
        self.accepted
            .iter()
            .enumerate()
            .map(|(i, a)| {
                c += *a as usize;
                c as f64 / (i + 1) as f64
            })
            .collect()
    }
}

/// Sampler over a model's latents given fixed parameters and observations.
pub struct ModelSampler {
    pub cp: Reparameterized,
    pub dncp: Reparameterized,
    cp_target: ModelDensity,
    dncp_target: ModelDensity,
    theta: Vec<f64>,
    observed: Assignment,
}

impl ModelSampler {
    pub fn new(model: &FactorGraphModel, theta: &[f64], observed: &Assignment) -> Result<Self> {
        let cp = Reparameterized::centered(model)?;
        let dncp = Reparameterized::non_centered(model)?;
        let observed = observed.observed_part(model);
        Ok(ModelSampler {
            cp_target: ModelDensity::new(&cp, theta, &observed)?,
            dncp_target: ModelDensity::new(&dncp, theta, &observed)?,
            cp,
            dncp,
            theta: theta.to_vec(),
            observed,
        })
    }

    pub fn dim(&self) -> usize {
        self.cp.num_coords()
    }

    /// Replace the fixed parameters and observations without recompiling.
    pub fn rebind(&mut self, theta: &[f64], observed: &Assignment) -> Result<()> {
        let observed = observed.observed_part(&self.cp.original);
        self.cp_target.rebind(theta, &observed)?;
        self.dncp_target.rebind(theta, &observed)?;
        self.theta = theta.to_vec();
        self.observed = observed;
        Ok(())
    }

    /// `∇_θ log p_θ(x, z)` at latent values `z`, written into `out`.
    pub fn joint_theta_grad(&mut self, z: &[f64], out: &mut [f64]) -> Result<f64> {
        self.cp_target.theta_grad(z, out)
    }

    /// Latent values drawn from the prior, in latent order.
    pub fn prior_draw(&self, rng: &mut SimRng) -> Result<Vec<f64>> {
        let a = ancestral_sample(&self.cp.original, &self.theta, rng)?;
        a.flatten(&self.cp.original, self.cp.latents())
    }

    pub fn to_system(&self, z: &[f64], system: System) -> Result<Vec<f64>> {
        match system {
            System::Z => Ok(z.to_vec()),
            System::Eps => self.dncp.coords_from_z(&self.theta, z, &self.observed),
        }
    }

    pub fn to_z(&self, coords: &[f64], system: System) -> Result<Vec<f64>> {
        match system {
            System::Z => Ok(coords.to_vec()),
            System::Eps => self.dncp.z_from_coords(&self.theta, coords, &self.observed),
        }
    }

    fn target(&mut self, system: System) -> &mut ModelDensity {
        match system {
            System::Z => &mut self.cp_target,
            System::Eps => &mut self.dncp_target,
        }
    }

    /// Move `state` into `system`, recomputing its density and gradient.
    pub fn switch(&mut self, state: &mut ChainState, system: System) -> Result<()> {
        if state.system == system {
            return Ok(());
        }
        let z = self.to_z(&state.coords, state.system)?;
        let coords = self.to_system(&z, system)?;
        *state = ChainState::new(coords, system, self.target(system))?;
        Ok(())
    }

    /// One mixture transition: CP with probability `mix_rho`, else DNCP.
    /// Returns the system used and whether the move was accepted.
    pub fn mixture_step(
        &mut self,
        state: &mut ChainState,
        steps: &[f64; 2],
        config: &HmcConfig,
        rng: &mut SimRng,
    ) -> Result<(System, bool)> {
        let system = if config.mix_rho >= 1.0 {
            System::Z
        } else if config.mix_rho <= 0.0 {
            System::Eps
        } else if rng.random::<f64>() < config.mix_rho {
            System::Z
        } else {
            System::Eps
        };
        self.switch(state, system)?;
        let step = steps[system as usize];
        let acc = hmc_step(state, step, config.leapfrog_steps, self.target(system), rng);
        Ok((system, acc))
    }

    /// Burn-in with adaptation followed by `config.samples` stored draws.
    /// `init` gives starting latent values; by default they are drawn from
    /// the prior.
    pub fn run(&mut self, param: Parameterization, config: &HmcConfig, init: Option<&[f64]>) -> Result<ChainResult> {
        config.validate()?;
        let mut rng = seeded(config.seed);
        let z0 = match init {
            Some(z) => z.to_vec(),
            None => self.prior_draw(&mut rng)?,
        };
        let start = match param {
            Parameterization::Cp => System::Z,
            Parameterization::Dncp => System::Eps,
            Parameterization::Mix => {
                if config.mix_rho > 0.0 {
                    System::Z
                } else {
                    System::Eps
                }
            }
        };
        let coords = self.to_system(&z0, start)?;
        let mut state = ChainState::new(coords, start, self.target(start))?;
        let total = config.burn_in + config.samples;
        let mut steps = [config.initial_step_size; 2];
        let mut res = ChainResult {
            draws: Vec::with_capacity(config.samples),
            accepted: Vec::with_capacity(total),
            step_sizes: Vec::with_capacity(total),
            systems: Vec::with_capacity(total),
            burn_in: config.burn_in,
        };
        for it in 0..total {
            let (system, acc) = match param {
                Parameterization::Mix => {
                    let (s, a) = self.mixture_step(&mut state, &steps, config, &mut rng)?;
                    (s, a)
                }
                _ => {
                    let step = steps[start as usize];
                    let a = hmc_step(&mut state, step, config.leapfrog_steps, self.target(start), &mut rng);
                    (start, a)
                }
            };
            res.step_sizes.push(steps[system as usize]);
            res.accepted.push(acc);
            res.systems.push(system);
            steps[system as usize] = adapt_step_size(steps[system as usize], acc, it, config)?;
            if it >= config.burn_in {
                res.draws.push(self.to_z(&state.coords, state.system)?);
            }
        }
        Ok(res)
    }
}

/// Convenience wrapper around [`ModelSampler::run`].
pub fn run_chain(
    model: &FactorGraphModel,
    theta: &[f64],
    observed: &Assignment,
    param: Parameterization,
    config: &HmcConfig,
) -> Result<ChainResult> {
    ModelSampler::new(model, theta, observed)?.run(param, config, None)
}

/// HMC on an arbitrary target; returns post-burn-in draws.
pub fn run_hmc(target: &mut dyn LogDensity, init: &[f64], config: &HmcConfig) -> Result<ChainResult> {
    config.validate()?;
    let mut rng = seeded(config.seed);
    let mut state = ChainState::new(init.to_vec(), System::Z, target)?;
    let mut step = config.initial_step_size;
    let total = config.burn_in + config.samples;
    let mut res = ChainResult {
        draws: Vec::with_capacity(config.samples),
        accepted: Vec::with_capacity(total),
        step_sizes: Vec::with_capacity(total),
        systems: Vec::with_capacity(total),
        burn_in: config.burn_in,
    };
    for it in 0..total {
        let acc = hmc_step(&mut state, step, config.leapfrog_steps, target, &mut rng);
        res.step_sizes.push(step);
        res.accepted.push(acc);
        res.systems.push(System::Z);
        step = adapt_step_size(step, acc, it, config)?;
        if it >= config.burn_in {
            res.draws.push(state.coords.clone());
        }
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::build_lds_model;

    struct Flat(usize);
    impl LogDensity for Flat {
        fn dim(&self) -> usize {
            self.0
        }
        fn value_and_grad(&mut self, _q: &[f64], g: &mut [f64]) -> Result<f64> {
            g.iter_mut().for_each(|v| *v = 0.0);
            Ok(0.0)
        }
    }

    fn std_normal(d: usize) -> GaussianTarget {
        GaussianTarget {
            mean: vec![0.0; d],
            precision: (0..d)
                .map(|i| (0..d).map(|j| (i == j) as u8 as f64).collect())
                .collect(),
        }
    }

    #[test]
    fn free_particle_drifts() {
        let mut q = vec![1.0, -2.0];
        let mut p = vec![0.5, 0.25];
        let mut g = vec![0.0; 2];
        leapfrog(&mut q, &mut p, &mut g, 0.1, 7, &mut Flat(2)).unwrap();
        assert!((q[0] - (1.0 + 0.7 * 0.5)).abs() < 1e-12);
        assert!((q[1] - (-2.0 + 0.7 * 0.25)).abs() < 1e-12);
    }

    #[test]
    fn reversibility() {
        let mut t = GaussianTarget {
            mean: vec![0.3, -0.1],
            precision: vec![vec![2.0, 0.8], vec![0.8, 1.5]],
        };
        let q0 = vec![0.7, 1.1];
        let p0 = vec![-0.4, 0.9];
        let mut q = q0.clone();
        let mut p = p0.clone();
        let mut g = vec![0.0; 2];
        t.value_and_grad(&q, &mut g).unwrap();
        leapfrog(&mut q, &mut p, &mut g, 0.13, 25, &mut t).unwrap();
        p.iter_mut().for_each(|v| *v = -*v);
        leapfrog(&mut q, &mut p, &mut g, 0.13, 25, &mut t).unwrap();
        for i in 0..2 {
            assert!((q[i] - q0[i]).abs() < 1e-10);
            assert!((p[i] + p0[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_error_is_second_order() {
        // over a fixed integration time; a single step from p = 0 is O(h^4)
        let err = |h: f64, n: usize| {
            let mut t = std_normal(1);
            let mut q = vec![1.0];
            let mut p = vec![0.0];
            let mut g = vec![-1.0];
            let lp = leapfrog(&mut q, &mut p, &mut g, h, n, &mut t).unwrap();
            ((-lp + 0.5 * p[0] * p[0]) - 0.5).abs()
        };
        let ratio = err(0.1, 10) / err(0.05, 20);
        assert!((ratio - 4.0).abs() < 0.05, "{ratio}");
        let one_step = err(0.1, 1) / err(0.05, 1);
        assert!((one_step - 16.0).abs() < 0.5, "{one_step}");
    }

    #[test]
    fn adaptation_rule() {
        let cfg = HmcConfig {
            burn_in: 1000,
            ..HmcConfig::default()
        };
        let mut s = 1.0;
        for it in 0..100 {
            s = adapt_step_size(s, true, it, &cfg).unwrap();
        }
        assert!((s - 1.02f64.powi(100)).abs() < 1e-9);
        let half = HmcConfig {
            target_accept_rate: 0.5,
            ..cfg.clone()
        };
        let mut s = 1.0;
        for it in 0..1000 {
            s = adapt_step_size(s, it % 2 == 0, it, &half).unwrap();
        }
        assert!((s - 1.0).abs() < 0.01);
        assert_eq!(adapt_step_size(0.3, false, 1000, &cfg).unwrap(), 0.3);
        assert!(matches!(
            adapt_step_size(1e-12, false, 0, &cfg),
            Err(Error::StepUnderflow(_))
        ));
    }

    #[test]
    fn standard_normal_moments() {
        let cfg = HmcConfig {
            samples: 20_000,
            burn_in: 500,
            seed: 17,
            ..HmcConfig::default()
        };
        let r = run_hmc(&mut std_normal(1), &[0.0], &cfg).unwrap();
        let x: Vec<f64> = r.draws.iter().map(|d| d[0]).collect();
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / x.len() as f64;
        assert!(m.abs() < 0.03, "{m}");
        assert!((0.94..=1.06).contains(&v), "{v}");
    }

    #[test]
    fn tiny_steps_always_accept() {
        let cfg = HmcConfig {
            initial_step_size: 1e-6,
            burn_in: 0,
            samples: 200,
            ..HmcConfig::default()
        };
        let r = run_hmc(&mut std_normal(3), &[0.5, 0.1, -0.3], &cfg).unwrap();
        assert_eq!(r.accept_rate_after_burn_in(), 1.0);
    }

    fn lds_setup() -> (FactorGraphModel, Assignment) {
        let m = build_lds_model(1.0, 0.3).unwrap();
        let mut obs = Assignment::new();
        obs.set(m.find("x1").unwrap(), vec![0.4]);
        obs.set(m.find("x2").unwrap(), vec![-0.2]);
        (m, obs)
    }

    #[test]
    fn chains_are_reproducible_and_sized() {
        let (m, obs) = lds_setup();
        let cfg = HmcConfig {
            burn_in: 50,
            samples: 123,
            seed: 4,
            ..HmcConfig::default()
        };
        for p in [Parameterization::Cp, Parameterization::Dncp, Parameterization::Mix] {
            let a = run_chain(&m, &[], &obs, p, &cfg).unwrap();
            let b = run_chain(&m, &[], &obs, p, &cfg).unwrap();
            assert_eq!(a.draws.len(), 123);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn degenerate_mixtures_match_pure_chains() {
        let (m, obs) = lds_setup();
        let base = HmcConfig {
            burn_in: 30,
            samples: 60,
            seed: 8,
            ..HmcConfig::default()
        };
        let cp = run_chain(&m, &[], &obs, Parameterization::Cp, &base).unwrap();
        let mix1 = run_chain(
            &m,
            &[],
            &obs,
            Parameterization::Mix,
            &HmcConfig {
                mix_rho: 1.0,
                ..base.clone()
            },
        )
        .unwrap();
        assert_eq!(cp.draws, mix1.draws);
        let dn = run_chain(&m, &[], &obs, Parameterization::Dncp, &base).unwrap();
        let mix0 = run_chain(
            &m,
            &[],
            &obs,
            Parameterization::Mix,
            &HmcConfig { mix_rho: 0.0, ..base },
        )
        .unwrap();
        assert_eq!(dn.draws, mix0.draws);
    }
}
