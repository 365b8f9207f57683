//! Parameter learning: maximum Monte Carlo likelihood (MMCL) through the
//! DNCP form of a model, and Monte Carlo EM with HMC E-steps. Both ascend
//! with Adagrad.
//!
//! Datapoints are flat rows over the model's observed nodes in topological
//! order, as produced by [`Assignment::flatten`].

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Assignment, FactorGraphModel, FactorSelection, LogJointGraph, NodeId};
use crate::reparam::{NoiseDist, Reparameterized};
use crate::rng::{derive_seed, seeded, stream, SimRng};
use crate::sampler::{HmcConfig, ModelSampler, Parameterization};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdagradState {
    pub learning_rate: f64,
    /// Running sums of squared gradients; never decrease.
    pub accumulators: Vec<f64>,
    pub epsilon: f64,
}

impl AdagradState {
    pub fn new(learning_rate: f64, dim: usize) -> Self {
        AdagradState {
            learning_rate,
            accumulators: vec![0.0; dim],
            epsilon: 1e-8,
        }
    }

    /// Ascent step `θ += lr · g / (√acc + ε)` after `acc += g²`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != grad.len() || grad.len() != self.accumulators.len() {
            return Err(Error::Shape(format!(
                "adagrad: theta {}, grad {}, state {}",
                theta.len(),
                grad.len(),
                self.accumulators.len()
            )));
        }
        for ((t, g), a) in theta.iter_mut().zip(grad).zip(self.accumulators.iter_mut()) {
            *a += g * g;
            *t += self.learning_rate * g / (a.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Observed-node assignment from a flat datapoint.
pub fn observation(model: &FactorGraphModel, row: &[f64]) -> Result<Assignment> {
    let obs = model.observed_nodes();
    let want = model.dim_of(&obs);
    if row.len() != want {
        return Err(Error::Shape(format!(
            "datapoint has {} values, model observes {want}",
            row.len()
        )));
    }
    let mut a = Assignment::new();
    a.scatter(model, &obs, row);
    Ok(a)
}

/// `log (1/L) Σ_l p_θ(x | pa(ε_l))` on the DNCP form of a model, with every
/// latent driven by an auxiliary root.
pub struct MmclEstimator {
    graph: LogJointGraph,
    aux: Vec<NodeId>,
    noise: Vec<NoiseDist>,
    observed: Vec<NodeId>,
    num_params: usize,
}

impl MmclEstimator {
    pub fn new(model: &FactorGraphModel) -> Result<Self> {
        let rep = Reparameterized::non_centered(model)?;
        let mut aux = Vec::new();
        let mut noise = Vec::new();
        for &l in rep.latents() {
            let t = rep.plan.transform(l).expect("all latents are DNCP");
            aux.push(rep.aux_of(l).expect("all latents have auxiliaries"));
            noise.extend(std::iter::repeat_n(t.noise(), model.node(l).dim));
        }
        Ok(MmclEstimator {
            graph: LogJointGraph::compile(&rep.transformed, FactorSelection::ObservedOnly)?,
            aux,
            noise,
            observed: model.observed_nodes(),
            num_params: model.num_params(),
        })
    }

    /// Auxiliary coordinates per Monte Carlo sample.
    pub fn noise_dim(&self) -> usize {
        self.noise.len()
    }

    /// `l` auxiliary draws, flattened sample by sample.
    pub fn draw_noise(&self, l: usize, rng: &mut SimRng) -> Vec<f64> {
        (0..l)
            .flat_map(|_| self.noise.iter().map(|d| d.sample(rng)).collect::<Vec<_>>())
            .collect()
    }

    /// Estimator value at fixed noise; with `grad`, also its exact gradient
    /// with respect to `theta`.
    pub fn evaluate(&mut self, theta: &[f64], x: &[f64], eps: &[f64], mut grad: Option<&mut [f64]>) -> Result<f64> {
        let nd = self.noise_dim();
        let l = eps.len().checked_div(nd).unwrap_or(1);
        if l == 0 || eps.len() != l * nd {
            return Err(Error::Shape(format!("{} noise values for {nd} per sample", eps.len())));
        }
        self.graph.bind_theta(theta)?;
        self.graph.bind_flat(&self.observed, x)?;
        let mut g = vec![0.0; self.num_params];
        if let Some(out) = grad.as_deref_mut() {
            out.fill(0.0);
        }
        // streaming log-sum-exp: total = exp(m) · s, acc = Σ exp(v_l − m) g_l
        let mut m = f64::NEG_INFINITY;
        let mut s = 0.0;
        for k in 0..l {
            self.graph.bind_flat(&self.aux, &eps[k * nd..(k + 1) * nd])?;
            let v = if grad.is_some() {
                let v = self.graph.value_and_grad()?;
                self.graph.theta_grad_into(&mut g);
                v
            } else {
                self.graph.value()?
            };
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("log-likelihood of sample {k} is {v}")));
            }
            if v > m {
                let r = (m - v).exp();
                s *= r;
                if let Some(out) = grad.as_deref_mut() {
                    out.iter_mut().for_each(|a| *a *= r);
                }
                m = v;
            }
            let w = (v - m).exp();
            s += w;
            if let Some(out) = grad.as_deref_mut() {
                out.iter_mut().zip(&g).for_each(|(a, gi)| *a += w * gi);
            }
        }
        if let Some(out) = grad {
            out.iter_mut().for_each(|a| *a /= s);
        }
        let est = m + s.ln() - (l as f64).ln();
        if !est.is_finite() {
            return Err(Error::NonFinite("MMCL estimate".into()));
        }
        Ok(est)
    }
}

/// MMCL estimate of `log p_θ(x)` with `l` fresh auxiliary draws.
pub fn mmcl_estimate(model: &FactorGraphModel, theta: &[f64], x: &[f64], l: usize, rng: &mut SimRng) -> Result<f64> {
    let mut est = MmclEstimator::new(model)?;
    let eps = est.draw_noise(l, rng);
    est.evaluate(theta, x, &eps, None)
}

/// Estimate and its gradient with respect to `theta` under the same draws.
pub fn mmcl_gradient(
    model: &FactorGraphModel,
    theta: &[f64],
    x: &[f64],
    l: usize,
    rng: &mut SimRng,
) -> Result<(f64, Vec<f64>)> {
    let mut est = MmclEstimator::new(model)?;
    let eps = est.draw_noise(l, rng);
    let mut g = vec![0.0; model.num_params()];
    let v = est.evaluate(theta, x, &eps, Some(&mut g))?;
    Ok((v, g))
}

/// `(1/S) Σ_s ∇_θ log p_θ(x, z_s)` for latent samples `z_s`.
pub fn m_step_gradient(sampler: &mut ModelSampler, samples: &[Vec<f64>], out: &mut [f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyESample);
    }
    out.fill(0.0);
    let mut g = vec![0.0; out.len()];
    for z in samples {
        sampler.joint_theta_grad(z, &mut g)?;
        out.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let n = samples.len() as f64;
    out.iter_mut().for_each(|a| *a /= n);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mmcl,
    Mcem,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// MMCL samples per gradient.
    pub l: usize,
    /// MMCL samples per datapoint when reporting log-likelihoods.
    pub l_eval: usize,
    /// Evaluate every this many epochs (and always after the last).
    pub eval_every: usize,
    pub seed: u64,
    /// Kept HMC draws per datapoint per E-step.
    pub e_step_samples: usize,
    /// Adapting HMC transitions before each E-step's kept draws.
    pub e_step_warmup: usize,
    /// Adapting transitions the first time a datapoint's chain runs.
    pub initial_burn_in: usize,
    pub sampler: Parameterization,
    /// Leapfrog steps, initial step size and target acceptance for E-steps.
    pub hmc: HmcConfig,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            method: Method::Mmcl,
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 1,
            l: 10,
            l_eval: 500,
            eval_every: 1,
            seed: 0,
            e_step_samples: 5,
            e_step_warmup: 2,
            initial_burn_in: 50,
            sampler: Parameterization::Cp,
            hmc: HmcConfig::default(),
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        if self.batch_size == 0 || self.l == 0 || self.l_eval == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch_size, l, l_eval and eval_every must be positive".into(),
            ));
        }
        if self.method == Method::Mcem && self.e_step_samples == 0 {
            return Err(Error::EmptyESample);
        }
        let mut h = self.hmc.clone();
        h.samples = 1;
        h.validate()
    }
}

/// Persistent per-datapoint chain for MCEM.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSlot {
    pub z: Option<Vec<f64>>,
    pub step: f64,
}

/// One MCEM update on a batch: warm-started HMC E-steps at the current
/// `theta`, then an Adagrad step on the averaged complete-data gradient.
#[allow(clippy::too_many_arguments)]
pub fn mcem_iteration(
    model: &FactorGraphModel,
    theta: &mut [f64],
    data: &[Vec<f64>],
    batch: &[usize],
    chains: &mut [ChainSlot],
    config: &LearningConfig,
    opt: &mut AdagradState,
    iter_seed: u64,
) -> Result<()> {
    if config.e_step_samples == 0 {
        return Err(Error::EmptyESample);
    }
    let th: &[f64] = theta;
    let first = observation(model, &data[batch[0]])?;
    let grads: Vec<(usize, Vec<f64>, ChainSlot)> = batch
        .par_iter()
        .map_init(
            || ModelSampler::new(model, th, &first),
            |sampler, &i| -> Result<(usize, Vec<f64>, ChainSlot)> {
                let sampler = sampler.as_mut().map_err(|e| e.clone())?;
                sampler.rebind(th, &observation(model, &data[i])?)?;
                let slot = &chains[i];
                let mut hmc = config.hmc.clone();
                hmc.samples = config.e_step_samples;
                hmc.burn_in = if slot.z.is_some() {
                    config.e_step_warmup
                } else {
                    config.initial_burn_in
                };
                hmc.initial_step_size = slot.step;
                hmc.seed = derive_seed(iter_seed, i as u64);
                let res = sampler.run(config.sampler, &hmc, slot.z.as_deref())?;
                let mut g = vec![0.0; th.len()];
                m_step_gradient(sampler, &res.draws, &mut g)?;
                let next = ChainSlot {
                    z: res.draws.last().cloned(),
                    step: res.step_sizes[hmc.burn_in],
                };
                Ok((i, g, next))
            },
        )
        .collect::<Result<_>>()?;
    let mut mean = vec![0.0; theta.len()];
    for (i, g, slot) in grads {
        mean.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        chains[i] = slot;
    }
    let n = batch.len() as f64;
    mean.iter_mut().for_each(|a| *a /= n);
    opt.step(theta, &mean)
}

/// One MMCL update on a batch with fresh auxiliary draws per datapoint.
pub fn mmcl_iteration(
    model: &FactorGraphModel,
    theta: &mut [f64],
    data: &[Vec<f64>],
    batch: &[usize],
    config: &LearningConfig,
    opt: &mut AdagradState,
    iter_seed: u64,
) -> Result<()> {
    let th: &[f64] = theta;
    let grads: Vec<Vec<f64>> = batch
        .par_iter()
        .map_init(
            || MmclEstimator::new(model),
            |est, &i| -> Result<Vec<f64>> {
                let est = est.as_mut().map_err(|e| e.clone())?;
                let mut rng = stream(iter_seed, i as u64);
                let eps = est.draw_noise(config.l, &mut rng);
                let mut g = vec![0.0; th.len()];
                est.evaluate(th, &data[i], &eps, Some(&mut g))?;
                Ok(g)
            },
        )
        .collect::<Result<_>>()?;
    let mut mean = vec![0.0; theta.len()];
    for g in &grads {
        mean.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let n = batch.len() as f64;
    mean.iter_mut().for_each(|a| *a /= n);
    opt.step(theta, &mean)
}

/// Average MMCL log-likelihood per datapoint. Datapoint `i` always uses
/// noise stream `(seed, i)`, so values at different `theta` share draws.
pub fn mean_log_likelihood(
    model: &FactorGraphModel,
    theta: &[f64],
    data: &[Vec<f64>],
    l: usize,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Domain("no datapoints to evaluate".into()));
    }
    let vals: Vec<f64> = data
        .par_iter()
        .enumerate()
        .map_init(
            || MmclEstimator::new(model),
            |est, (i, x)| -> Result<f64> {
                let est = est.as_mut().map_err(|e| e.clone())?;
                let eps = est.draw_noise(l, &mut stream(seed, i as u64));
                est.evaluate(theta, x, &eps, None)
            },
        )
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub updates: usize,
    pub train_loglik: f64,
    pub test_loglik: Option<f64>,
    pub theta: Vec<f64>,
}

/// Train from `theta0`; the trace starts with the untrained evaluation.
pub fn train(
    model: &FactorGraphModel,
    theta0: &[f64],
    train_data: &[Vec<f64>],
    test_data: &[Vec<f64>],
    config: &LearningConfig,
) -> Result<Vec<TraceRow>> {
    config.validate()?;
    model.layout().check_theta(theta0)?;
    if train_data.is_empty() {
        return Err(Error::Domain("empty training set".into()));
    }
    let eval_seed = derive_seed(config.seed, 0xE7A1);
    let eval = |theta: &[f64], epoch: usize, updates: usize| -> Result<TraceRow> {
        Ok(TraceRow {
            epoch,
            updates,
            train_loglik: mean_log_likelihood(model, theta, train_data, config.l_eval, eval_seed)?,
            test_loglik: if test_data.is_empty() {
                None
            } else {
                Some(mean_log_likelihood(model, theta, test_data, config.l_eval, eval_seed)?)
            },
            theta: theta.to_vec(),
        })
    };
    let mut theta = theta0.to_vec();
    let mut opt = AdagradState::new(config.learning_rate, theta.len());
    let mut chains = vec![
        ChainSlot {
            z: None,
            step: config.hmc.initial_step_size,
        };
        train_data.len()
    ];
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut shuffle = seeded(derive_seed(config.seed, 0x5A1F));
    let mut trace = vec![eval(&theta, 0, 0)?];
    let mut updates = 0usize;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        for batch in order.chunks(config.batch_size) {
            let iter_seed = derive_seed(config.seed, updates as u64 + 1);
            match config.method {
                Method::Mmcl => mmcl_iteration(model, &mut theta, train_data, batch, config, &mut opt, iter_seed)?,
                Method::Mcem => mcem_iteration(
                    model,
                    &mut theta,
                    train_data,
                    batch,
                    &mut chains,
                    config,
                    &mut opt,
                    iter_seed,
                )?,
            }
            updates += 1;
        }
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            trace.push(eval(&theta, epoch, updates)?);
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_model, ModelSpec};
    use crate::zoo::{build_linear_gaussian_toy, linear_gaussian_log_marginal, linear_gaussian_log_marginal_grad};

    #[test]
    fn adagrad_first_step_and_zero_gradient() {
        let mut s = AdagradState::new(0.1, 2);
        let mut th = vec![0.0, 5.0];
        s.step(&mut th, &[2.0, 0.0]).unwrap();
        assert!((th[0] - 0.1 * 2.0 / (2.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(th[1], 5.0);
        assert_eq!(s.accumulators, vec![4.0, 0.0]);
        assert!(s.step(&mut th, &[1.0]).is_err());
    }

    #[test]
    fn adagrad_constant_gradient_shrinks_as_inverse_sqrt() {
        let mut s = AdagradState::new(1.0, 1);
        let mut th = vec![0.0];
        let mut deltas = Vec::new();
        for _ in 0..16 {
            let before = th[0];
            s.step(&mut th, &[3.0]).unwrap();
            deltas.push(th[0] - before);
        }
        for (t, d) in deltas.iter().enumerate() {
            assert!((d * ((t + 1) as f64).sqrt() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn single_sample_estimate_is_the_conditional_likelihood() {
        let m = build_linear_gaussian_toy().unwrap();
        let th = [0.8, 0.1, -0.3];
        let mut est = MmclEstimator::new(&m).unwrap();
        let eps = [0.4];
        let v = est.evaluate(&th, &[1.0], &eps, None).unwrap();
        let mean = 0.8 * 0.4 + 0.1;
        let sd = (-0.3f64).exp();
        let want = -0.5 * ((1.0 - mean) / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn estimate_converges_to_marginal() {
        let m = build_linear_gaussian_toy().unwrap();
        let th = [1.0, 0.0, 0.0];
        let v = mmcl_estimate(&m, &th, &[0.0], 10_000, &mut seeded(5)).unwrap();
        assert!((v - linear_gaussian_log_marginal(&th, 0.0)).abs() < 0.02);
    }

    #[test]
    fn gradient_matches_finite_differences_under_fixed_noise() {
        let m = build_linear_gaussian_toy().unwrap();
        let th = vec![0.7, -0.2, 0.1];
        let mut est = MmclEstimator::new(&m).unwrap();
        let eps = est.draw_noise(50, &mut seeded(2));
        let mut g = vec![0.0; 3];
        est.evaluate(&th, &[0.9], &eps, Some(&mut g)).unwrap();
        for k in 0..3 {
            let (mut a, mut b) = (th.clone(), th.clone());
            a[k] += 1e-6;
            b[k] -= 1e-6;
            let fd =
                (est.evaluate(&a, &[0.9], &eps, None).unwrap() - est.evaluate(&b, &[0.9], &eps, None).unwrap()) / 2e-6;
            assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1.0), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn gradient_is_unbiased_for_large_l() {
        let m = build_linear_gaussian_toy().unwrap();
        let th = [0.6, 0.2, -0.1];
        let (_, g) = mmcl_gradient(&m, &th, &[1.2], 20_000, &mut seeded(9)).unwrap();
        let want = linear_gaussian_log_marginal_grad(&th, 1.2);
        for k in 0..3 {
            assert!((g[k] - want[k]).abs() < 0.03, "{k}: {} vs {}", g[k], want[k]);
        }
    }

    const DETERMINISTIC: &str = r#"
[[params]]
name = "c"
shape = [2]
[[params]]
name = "w"
shape = [2, 2]

[[nodes]]
name = "z"
kind = "latent"
dim = 2
family = "gaussian"
scale = 0.0
link = { kind = "constant", value = "c" }

[[nodes]]
name = "x"
kind = "observed"
dim = 2
parents = ["z"]
family = "bernoulli"
link = { kind = "affine", weight = "w" }
"#;

    #[test]
    fn deterministic_model_is_exact_for_every_l() {
        let m = build_model(&ModelSpec::from_toml(DETERMINISTIC).unwrap()).unwrap();
        let th = [0.3, -1.1, 0.5, -0.2, 0.9, 1.4];
        let x = [1.0, 0.0];
        let exact = crate::graph::log_joint(&m, &th, &observation(&m, &x).unwrap()).unwrap();
        for l in [1, 7, 100] {
            let (v, g) = mmcl_gradient(&m, &th, &x, l, &mut seeded(l as u64)).unwrap();
            assert!((v - exact).abs() < 1e-12);
            let gx = crate::graph::grad_log_joint_params(&m, &th, &observation(&m, &x).unwrap()).unwrap();
            assert!(g.iter().zip(&gx).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn m_step_gradient_with_exact_posterior_matches_marginal_gradient() {
        let m = build_linear_gaussian_toy().unwrap();
        let th: [f64; 3] = [0.9, -0.3, -0.2];
        let x = 0.7;
        // z | x ~ N(w (x − b) / v, s² / v) with v = w² + s²
        let (w, b, s2) = (th[0], th[1], (2.0 * th[2]).exp());
        let v = w * w + s2;
        let (mu, sd) = (w * (x - b) / v, (s2 / v).sqrt());
        let mut rng = seeded(4);
        let samples: Vec<Vec<f64>> = (0..40_000)
            .map(|_| vec![mu + sd * NoiseDist::StandardNormal.sample(&mut rng)])
            .collect();
        let mut sampler = ModelSampler::new(&m, &th, &observation(&m, &[x]).unwrap()).unwrap();
        let mut g = vec![0.0; 3];
        m_step_gradient(&mut sampler, &samples, &mut g).unwrap();
        let want = linear_gaussian_log_marginal_grad(&th, x);
        for k in 0..3 {
            assert!((g[k] - want[k]).abs() < 0.02, "{k}: {} vs {}", g[k], want[k]);
        }
        assert_eq!(m_step_gradient(&mut sampler, &[], &mut g), Err(Error::EmptyESample));
    }

    fn toy_data(n: usize, th: &[f64], seed: u64) -> Vec<Vec<f64>> {
        let m = build_linear_gaussian_toy().unwrap();
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| {
                let a = crate::graph::ancestral_sample(&m, th, &mut rng).unwrap();
                a.flatten(&m, &m.observed_nodes()).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_gives_flat_trace() {
        let m = build_linear_gaussian_toy().unwrap();
        let data = toy_data(20, &[1.0, 0.5, -0.5], 1);
        let cfg = LearningConfig {
            learning_rate: 0.0,
            epochs: 2,
            l_eval: 20,
            ..Default::default()
        };
        let tr = train(&m, &[0.1, 0.0, 0.0], &data, &[], &cfg).unwrap();
        assert_eq!(tr.len(), 3);
        assert!(tr
            .iter()
            .all(|r| r.train_loglik == tr[0].train_loglik && r.theta == tr[0].theta));
    }

    #[test]
    fn mcem_requires_samples_and_is_reproducible() {
        let m = build_linear_gaussian_toy().unwrap();
        let data = toy_data(10, &[1.0, 0.5, -0.5], 2);
        let mut cfg = LearningConfig {
            method: Method::Mcem,
            epochs: 2,
            batch_size: 3,
            l_eval: 10,
            initial_burn_in: 20,
            ..Default::default()
        };
        let a = train(&m, &[0.1, 0.0, 0.0], &data, &[], &cfg).unwrap();
        let b = train(&m, &[0.1, 0.0, 0.0], &data, &[], &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].theta, a[2].theta);
        cfg.e_step_samples = 0;
        assert_eq!(train(&m, &[0.1, 0.0, 0.0], &data, &[], &cfg), Err(Error::EmptyESample));
    }
}
