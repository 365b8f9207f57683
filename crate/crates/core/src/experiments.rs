//! Experiment drivers. Each run writes `results.csv`, `summary.json` and
//! `manifest.json` into an output directory; the CSV carries every float
//! with 17 significant digits so that reruns compare byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{
    covariance_from_hessian, cp_squared_correlation, dncp_squared_correlation, lds_correlations, prefer_dncp,
    squared_correlation_from_hessian, LocalFactorSummary,
};
use crate::data::{load_idx, synthetic_dataset};
use crate::diagnostics::{ess_report, spearman, EssReport};
use crate::error::{Error, Result};
use crate::graph::{ancestral_sample, Assignment, FactorGraphModel};
use crate::learning::{mean_log_likelihood, train, LearningConfig, Method, TraceRow};
use crate::reparam::Reparameterized;
use crate::rng::{derive_seed, stream};
use crate::sampler::{run_chain, HmcConfig, LogDensity, ModelDensity, Parameterization};
use crate::zoo::{build_dbn_model, build_generative_mlp, build_lds_model};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    CorrelationScan,
    Lds,
    DbnEss,
    MmclVsMcem,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::CorrelationScan,
        ExperimentKind::Lds,
        ExperimentKind::DbnEss,
        ExperimentKind::MmclVsMcem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::CorrelationScan => "correlation-scan",
            ExperimentKind::Lds => "lds",
            ExperimentKind::DbnEss => "dbn-ess",
            ExperimentKind::MmclVsMcem => "mmcl-vs-mcem",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub draws: usize,
    /// `α`, `β`, `|w|`, `σ` are `±10^u` with `u` uniform on this range.
    pub log10_range: [f64; 2],
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            draws: 1000,
            log10_range: [-2.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdsConfig {
    pub sigma_x: f64,
    pub sigma_z: Vec<f64>,
    /// Points per axis.
    pub grid: usize,
    /// Grid half-width in posterior standard deviations.
    pub half_width: f64,
    pub x: [f64; 2],
}

impl Default for LdsConfig {
    fn default() -> Self {
        LdsConfig {
            sigma_x: 1.0,
            sigma_z: vec![50.0, 2.0, 0.5, 0.02],
            grid: 101,
            half_width: 4.0,
            x: [0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbnEssConfig {
    pub t_len: usize,
    pub latent_dim: usize,
    pub obs_dim: usize,
    /// Grid of `log σ_z` in base [`log_base`](Self::log_base).
    pub log_sigma_z: Vec<f64>,
    pub log_base: f64,
    pub replicates: usize,
    pub emission_lag: bool,
    /// Autocorrelation lags kept in the summary.
    pub acf_lags: usize,
}

impl Default for DbnEssConfig {
    fn default() -> Self {
        DbnEssConfig {
            t_len: 10,
            latent_dim: 2,
            obs_dim: 5,
            log_sigma_z: vec![-5.0, -4.0, -3.0, -2.0, -1.0],
            log_base: 10.0,
            replicates: 3,
            emission_lag: false,
            acf_lags: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnExperimentConfig {
    /// Latent layer widths of the generative model, root first.
    pub dims: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub obs_dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Ground-truth parameters are `N(0, truth_scale²)`.
    pub truth_scale: f64,
    /// Initial parameters are `N(0, init_scale²)`.
    pub init_scale: f64,
    /// MMCL runs, one per sample count.
    pub l_values: Vec<usize>,
    /// Use an IDX image file instead of synthetic data.
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    pub binarize: bool,
}

impl Default for LearnExperimentConfig {
    fn default() -> Self {
        LearnExperimentConfig {
            dims: vec![2, 2],
            sigmas: vec![1.0, 0.5],
            obs_dim: 8,
            n_train: 1000,
            n_test: 200,
            truth_scale: 1.5,
            init_scale: 0.1,
            l_values: vec![10, 100],
            idx_images: None,
            idx_labels: None,
            binarize: true,
        }
    }
}

/// Full configuration of one experiment run. Sections not used by the
/// selected experiment are carried along unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub correlation_scan: ScanConfig,
    pub lds: LdsConfig,
    pub dbn_ess: DbnEssConfig,
    pub mmcl_vs_mcem: LearnExperimentConfig,
    pub sampler: HmcConfig,
    pub learning: LearningConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::DbnEss,
            seed: 0,
            correlation_scan: ScanConfig::default(),
            lds: LdsConfig::default(),
            dbn_ess: DbnEssConfig::default(),
            mmcl_vs_mcem: LearnExperimentConfig::default(),
            sampler: HmcConfig::default(),
            learning: LearningConfig {
                learning_rate: 0.1,
                epochs: 30,
                eval_every: 10,
                l_eval: 200,
                ..LearningConfig::default()
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let s = &self.correlation_scan;
        if s.draws == 0 || !(s.log10_range[0] < s.log10_range[1]) {
            return bad("correlation_scan needs draws > 0 and an increasing range");
        }
        let l = &self.lds;
        if l.sigma_z.is_empty() || l.grid < 2 || !(l.sigma_x > 0.0) || l.sigma_z.iter().any(|s| !(*s > 0.0)) {
            return bad("lds needs positive scales, a non-empty sigma_z grid and grid >= 2");
        }
        let d = &self.dbn_ess;
        if d.log_sigma_z.is_empty() || d.replicates == 0 || d.t_len < 2 || d.latent_dim == 0 || d.obs_dim == 0 {
            return bad("dbn_ess needs a non-empty grid, replicates > 0, t_len >= 2 and positive dims");
        }
        if !(d.log_base > 1.0) {
            return bad("dbn_ess.log_base must exceed 1");
        }
        let m = &self.mmcl_vs_mcem;
        if m.dims.is_empty() || m.dims.len() != m.sigmas.len() || m.n_train == 0 || m.l_values.is_empty() {
            return bad("mmcl_vs_mcem needs matching dims/sigmas, n_train > 0 and l_values");
        }
        self.sampler.validate()?;
        self.learning.validate()
    }
}

/// Output directory contents of a finished run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub results_csv: PathBuf,
    pub summary_json: PathBuf,
    pub manifest_json: PathBuf,
    pub summary: Value,
}

/// Float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.to_string()))
    }
}

/// SHA-256 over git's blob framing `"blob <len>\0" ++ bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    let mut s = String::with_capacity(64);
    for b in h.finalize() {
        write!(s, "{b:02x}").expect("writing to a string");
    }
    s
}

/// Execute `config.experiment` and write its outputs into `out`. Any file
/// written before a failure is removed.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<RunOutput> {
    config.validate()?;
    let (table, summary, extra_inputs) = match config.experiment {
        ExperimentKind::CorrelationScan => correlation_scan(config)?,
        ExperimentKind::Lds => lds_grid(config)?,
        ExperimentKind::DbnEss => dbn_ess(config)?,
        ExperimentKind::MmclVsMcem => mmcl_vs_mcem(config)?,
    };
    let csv = table.to_csv()?;
    let summary_bytes = serde_json::to_vec_pretty(&summary).map_err(|e| Error::Io(e.to_string()))?;
    let config_json = serde_json::to_value(config).map_err(|e| Error::Io(e.to_string()))?;
    let mut inputs = serde_json::to_vec(&config_json).map_err(|e| Error::Io(e.to_string()))?;
    inputs.extend(extra_inputs);
    let manifest = json!({
        "experiment": config.experiment.name(),
        "seed": config.seed,
        "config": config_json,
        "input_hash": content_hash(&inputs),
        "outputs": {
            "results.csv": content_hash(&csv),
            "summary.json": content_hash(&summary_bytes),
        },
        "version": env!("CARGO_PKG_VERSION"),
    });
    let manifest_bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;

    let paths = [
        out.join("results.csv"),
        out.join("summary.json"),
        out.join("manifest.json"),
    ];
    let write_all = || -> Result<()> {
        std::fs::create_dir_all(out)?;
        std::fs::write(&paths[0], &csv)?;
        std::fs::write(&paths[1], &summary_bytes)?;
        std::fs::write(&paths[2], &manifest_bytes)?;
        Ok(())
    };
    if let Err(e) = write_all() {
        for p in &paths {
            let _ = std::fs::remove_file(p);
        }
        return Err(e);
    }
    let [results_csv, summary_json, manifest_json] = paths;
    Ok(RunOutput {
        results_csv,
        summary_json,
        manifest_json,
        summary,
    })
}

type Produced = (Table, Value, Vec<u8>);

fn correlation_scan(config: &ExperimentConfig) -> Result<Produced> {
    let c = &config.correlation_scan;
    let mut rng = stream(config.seed, 0);
    let [lo, hi] = c.log10_range;
    let mut t = Table::new(&["alpha", "beta", "w", "sigma", "rho2_cp", "rho2_dncp", "prefer_dncp"]);
    let (mut max_err, mut counterexamples, mut n_prefer) = (0.0f64, 0usize, 0usize);
    for _ in 0..c.draws {
        let mut mag = || 10f64.powf(rng.random_range(lo..hi));
        let (alpha, beta, w_abs, sigma) = (-mag(), -mag(), mag(), mag());
        let w = if rng.random::<bool>() { w_abs } else { -w_abs };
        let s = LocalFactorSummary::new(alpha, beta, w, sigma);
        let rc = cp_squared_correlation(&s)?;
        let rd = dncp_squared_correlation(&s)?;
        let oc = squared_correlation_from_hessian(&s.cp_hessian(), 0, 1)?;
        let od = squared_correlation_from_hessian(&s.dncp_hessian(), 0, 1)?;
        max_err = max_err.max(rel(rc, oc)).max(rel(rd, od));
        let p = prefer_dncp(sigma, beta)?;
        if p != (rc > rd) {
            counterexamples += 1;
        }
        n_prefer += p as usize;
        t.rows.push(vec![
            fmt_f64(alpha),
            fmt_f64(beta),
            fmt_f64(w),
            fmt_f64(sigma),
            fmt_f64(rc),
            fmt_f64(rd),
            p.to_string(),
        ]);
    }
    let summary = json!({
        "experiment": "correlation-scan",
        "seed": config.seed,
        "draws": c.draws,
        "prefer_dncp_count": n_prefer,
        "max_relative_error_vs_hessian": max_err,
        "inequality_counterexamples": counterexamples,
    });
    Ok((t, summary, Vec::new()))
}

fn rel(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

fn lds_grid(config: &ExperimentConfig) -> Result<Produced> {
    let c = &config.lds;
    let mut t = Table::new(&["sigma_z", "parameterization", "u", "v", "log_density", "rho"]);
    let mut blocks = Vec::new();
    for &sz in &c.sigma_z {
        let model = build_lds_model(c.sigma_x, sz)?;
        let report = lds_correlations(c.sigma_x, sz)?;
        let mut observed = Assignment::new();
        observed.set(model.require("x1")?, vec![c.x[0]]);
        observed.set(model.require("x2")?, vec![c.x[1]]);
        // posterior mean of z solves −H μ = x / σx²
        let cov_z = covariance_from_hessian(&report.hessian_cp)?;
        let ix = 1.0 / (c.sigma_x * c.sigma_x);
        let mz = [
            cov_z[0][0] * c.x[0] * ix + cov_z[0][1] * c.x[1] * ix,
            cov_z[1][0] * c.x[0] * ix + cov_z[1][1] * c.x[1] * ix,
        ];
        let me = [mz[0], (mz[1] - mz[0]) / sz];
        let cov_e = covariance_from_hessian(&report.hessian_dncp)?;
        let mut block = json!({ "sigma_z": sz, "rho2_cp": report.rho_sq_cp, "rho2_dncp": report.rho_sq_dncp, "prefer_dncp": report.prefer_dncp });
        for (param, rep, mean, cov, h) in [
            ("cp", Reparameterized::centered(&model)?, mz, cov_z, &report.hessian_cp),
            (
                "dncp",
                Reparameterized::non_centered(&model)?,
                me,
                cov_e,
                &report.hessian_dncp,
            ),
        ] {
            let rho = h[0][1] / (h[0][0] * h[1][1]).sqrt();
            block[format!("rho_{param}")] = json!(rho);
            let mut dens = ModelDensity::new(&rep, &[], &observed)?;
            let mut g = [0.0; 2];
            let axis = |k: usize, i: usize| {
                let sd = cov[k][k].sqrt();
                mean[k] - c.half_width * sd + 2.0 * c.half_width * sd * i as f64 / (c.grid - 1) as f64
            };
            for i in 0..c.grid {
                for j in 0..c.grid {
                    let (u, v) = (axis(0, i), axis(1, j));
                    let lp = dens.value_and_grad(&[u, v], &mut g)?;
                    t.rows.push(vec![
                        fmt_f64(sz),
                        param.to_string(),
                        fmt_f64(u),
                        fmt_f64(v),
                        fmt_f64(lp),
                        fmt_f64(rho),
                    ]);
                }
            }
        }
        blocks.push(block);
    }
    let summary = json!({
        "experiment": "lds",
        "seed": config.seed,
        "sigma_x": c.sigma_x,
        "grid": c.grid,
        "blocks": blocks,
    });
    Ok((t, summary, Vec::new()))
}

/// ESS summaries of one DBN grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbnCell {
    pub replicate: usize,
    pub log_sigma_z: f64,
    pub sigma_z: f64,
    /// Indexed by [`Parameterization`] in the order cp, dncp, mix.
    pub ess: [EssSummary; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssSummary {
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub accept_rate: f64,
    /// Autocorrelation of the first coordinate, lags `0..=acf_lags`.
    pub acf_first: Vec<f64>,
}

impl EssSummary {
    fn from_report(r: &EssReport, accept_rate: f64) -> Self {
        EssSummary {
            median: r.median,
            min: r.min,
            max: r.max,
            accept_rate,
            acf_first: r.autocorr.iter().map(|row| row[0]).collect(),
        }
    }
}

const PARAMS: [Parameterization; 3] = [Parameterization::Cp, Parameterization::Dncp, Parameterization::Mix];

/// DBN model, parameters and one observed sequence for replicate `r` at
/// scale `sigma_z`. Parameters depend only on `(seed, r)`.
pub fn dbn_instance(
    c: &DbnEssConfig,
    seed: u64,
    r: usize,
    sigma_z: f64,
) -> Result<(FactorGraphModel, Vec<f64>, Assignment)> {
    let mut rng = stream(seed, r as u64);
    let (model, theta) = build_dbn_model(c.t_len, c.latent_dim, c.obs_dim, sigma_z, c.emission_lag, &mut rng)?;
    let observed = ancestral_sample(&model, &theta, &mut rng)?.observed_part(&model);
    Ok((model, theta, observed))
}

/// Run every (replicate, grid point, sampler) chain of the DBN study.
pub fn dbn_cells(c: &DbnEssConfig, sampler: &HmcConfig, seed: u64) -> Result<Vec<DbnCell>> {
    let jobs: Vec<(usize, usize, usize)> = (0..c.replicates)
        .flat_map(|r| (0..c.log_sigma_z.len()).flat_map(move |k| (0..3).map(move |p| (r, k, p))))
        .collect();
    let runs: Vec<EssSummary> = jobs
        .par_iter()
        .map(|&(r, k, p)| -> Result<EssSummary> {
            let sz = c.log_base.powf(c.log_sigma_z[k]);
            let (model, theta, observed) = dbn_instance(c, seed, r, sz)?;
            let cfg = HmcConfig {
                seed: derive_seed(seed, ((r * 1000 + k) * 10 + p) as u64),
                ..sampler.clone()
            };
            let res = run_chain(&model, &theta, &observed, PARAMS[p], &cfg)?;
            let rep = ess_report(&res.draws, c.acf_lags)?;
            Ok(EssSummary::from_report(&rep, res.accept_rate_after_burn_in()))
        })
        .collect::<Result<_>>()?;
    let mut it = runs.into_iter();
    let mut cells = Vec::new();
    for r in 0..c.replicates {
        for &ls in &c.log_sigma_z {
            let ess = [it.next(), it.next(), it.next()].map(|e| e.expect("three runs per cell"));
            cells.push(DbnCell {
                replicate: r,
                log_sigma_z: ls,
                sigma_z: c.log_base.powf(ls),
                ess,
            });
        }
    }
    Ok(cells)
}

/// Qualitative checks on the DBN study under one ESS summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbnChecks {
    pub statistic: String,
    /// Grid means over replicates, `[cp, dncp, mix]` per grid point.
    pub grid_mean: Vec<[f64; 3]>,
    /// DNCP ≥ 10 × CP at the smallest σ_z, per replicate.
    pub dncp_dominates_at_smallest: Vec<bool>,
    /// CP and DNCP within a factor 3 at the largest σ_z, per replicate.
    pub comparable_at_largest: Vec<bool>,
    /// Mixture ≥ 10 × min(CP, DNCP), per replicate and grid point.
    pub mix_dominates: Vec<Vec<bool>>,
    /// Spearman correlation of CP ESS with σ_z, per replicate.
    pub spearman_per_replicate: Vec<f64>,
    /// Spearman correlation of the replicate-mean CP ESS with σ_z.
    pub spearman_of_mean: f64,
}

pub fn dbn_checks(cells: &[DbnCell], replicates: usize, pick: fn(&EssSummary) -> f64, statistic: &str) -> DbnChecks {
    let g = cells.len() / replicates;
    let at = |r: usize, k: usize| &cells[r * g + k];
    let v = |r: usize, k: usize, p: usize| pick(&at(r, k).ess[p]);
    let sig: Vec<f64> = (0..g).map(|k| at(0, k).sigma_z).collect();
    let (lo, hi) = {
        let mut idx: Vec<usize> = (0..g).collect();
        idx.sort_by(|a, b| sig[*a].total_cmp(&sig[*b]));
        (idx[0], idx[g - 1])
    };
    let grid_mean: Vec<[f64; 3]> = (0..g)
        .map(|k| [0, 1, 2].map(|p| (0..replicates).map(|r| v(r, k, p)).sum::<f64>() / replicates as f64))
        .collect();
    let cp_mean: Vec<f64> = grid_mean.iter().map(|m| m[0]).collect();
    DbnChecks {
        statistic: statistic.to_string(),
        dncp_dominates_at_smallest: (0..replicates).map(|r| v(r, lo, 1) >= 10.0 * v(r, lo, 0)).collect(),
        comparable_at_largest: (0..replicates)
            .map(|r| {
                let (a, b) = (v(r, hi, 0), v(r, hi, 1));
                a.max(b) <= 3.0 * a.min(b)
            })
            .collect(),
        mix_dominates: (0..replicates)
            .map(|r| {
                (0..g)
                    .map(|k| v(r, k, 2) >= 10.0 * v(r, k, 0).min(v(r, k, 1)))
                    .collect()
            })
            .collect(),
        spearman_per_replicate: (0..replicates)
            .map(|r| spearman(&sig, &(0..g).map(|k| v(r, k, 0)).collect::<Vec<_>>()))
            .collect(),
        spearman_of_mean: spearman(&sig, &cp_mean),
        grid_mean,
    }
}

fn dbn_ess(config: &ExperimentConfig) -> Result<Produced> {
    let c = &config.dbn_ess;
    let cells = dbn_cells(c, &config.sampler, config.seed)?;
    let mut t = Table::new(&[
        "log_sigma_z",
        "ess_cp",
        "ess_dncp",
        "ess_mix",
        "replicate",
        "sigma_z",
        "ess_min_cp",
        "ess_min_dncp",
        "ess_min_mix",
        "ess_max_cp",
        "ess_max_dncp",
        "ess_max_mix",
        "accept_cp",
        "accept_dncp",
        "accept_mix",
    ]);
    for cell in &cells {
        let e = &cell.ess;
        let mut row = vec![fmt_f64(cell.log_sigma_z)];
        row.extend(e.iter().map(|s| fmt_f64(s.median)));
        row.push(cell.replicate.to_string());
        row.push(fmt_f64(cell.sigma_z));
        row.extend(e.iter().map(|s| fmt_f64(s.min)));
        row.extend(e.iter().map(|s| fmt_f64(s.max)));
        row.extend(e.iter().map(|s| fmt_f64(s.accept_rate)));
        t.rows.push(row);
    }
    let acf: Vec<Value> = cells
        .iter()
        .filter(|c| c.replicate == 0)
        .map(|c| json!({ "log_sigma_z": c.log_sigma_z, "cp": c.ess[0].acf_first, "dncp": c.ess[1].acf_first, "mix": c.ess[2].acf_first }))
        .collect();
    let summary = json!({
        "experiment": "dbn-ess",
        "seed": config.seed,
        "log_base": c.log_base,
        "checks_median": dbn_checks(&cells, c.replicates, |s| s.median, "median"),
        "checks_min": dbn_checks(&cells, c.replicates, |s| s.min, "min"),
        "autocorrelation_replicate0": acf,
    });
    Ok((t, summary, Vec::new()))
}

/// Ground-truth model, its parameters, an initial guess and the train/test
/// split for the learning comparison. With `idx_images` set, the data come
/// from the file and there is no ground truth.
pub struct LearningSetup {
    pub model: FactorGraphModel,
    pub theta_true: Option<Vec<f64>>,
    pub theta0: Vec<f64>,
    pub train: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
    /// Raw bytes of any input files, for the manifest hash.
    pub input_bytes: Vec<u8>,
}

pub fn learning_setup(c: &LearnExperimentConfig, seed: u64) -> Result<LearningSetup> {
    let mut rng = stream(seed, 1);
    let normal = |s: f64| Normal::new(0.0, s).map_err(|e| Error::Config(e.to_string()));
    match &c.idx_images {
        None => {
            let model = build_generative_mlp(&c.dims, c.obs_dim, &c.sigmas)?;
            let nt = normal(c.truth_scale)?;
            let theta_true: Vec<f64> = (0..model.num_params()).map(|_| nt.sample(&mut rng)).collect();
            let d = synthetic_dataset(&model, &theta_true, c.n_train + c.n_test, &mut rng)?;
            let (train, test) = d.split(c.n_train);
            let ni = normal(c.init_scale)?;
            let theta0 = (0..model.num_params()).map(|_| ni.sample(&mut rng)).collect();
            Ok(LearningSetup {
                model,
                theta_true: Some(theta_true),
                theta0,
                train,
                test,
                input_bytes: Vec::new(),
            })
        }
        Some(path) => {
            let mut input_bytes = std::fs::read(path)?;
            let mut d = load_idx(path, c.idx_labels.as_deref())?;
            if let Some(l) = &c.idx_labels {
                input_bytes.extend(std::fs::read(l)?);
            }
            if c.binarize {
                d.binarize(derive_seed(seed, 0xB1));
            }
            let model = build_generative_mlp(&c.dims, d.rows * d.cols, &c.sigmas)?;
            let (train, mut test) = d.split(c.n_train);
            test.truncate(c.n_test);
            let ni = normal(c.init_scale)?;
            let theta0 = (0..model.num_params()).map(|_| ni.sample(&mut rng)).collect();
            Ok(LearningSetup {
                model,
                theta_true: None,
                theta0,
                train,
                test,
                input_bytes,
            })
        }
    }
}

/// Log-likelihood per datapoint of the best fully factorized Bernoulli model.
pub fn independent_bernoulli_loglik(data: &[Vec<f64>]) -> f64 {
    let n = data.len() as f64;
    let d = data.first().map_or(0, |r| r.len());
    (0..d)
        .map(|j| {
            let p = data.iter().map(|r| r[j]).sum::<f64>() / n;
            if p <= 0.0 || p >= 1.0 {
                0.0
            } else {
                p * p.ln() + (1.0 - p) * (1.0 - p).ln()
            }
        })
        .sum()
}

/// Named training runs of the learning comparison: one MMCL run per `L`,
/// then MCEM.
pub fn learning_runs(config: &ExperimentConfig, setup: &LearningSetup) -> Result<Vec<(String, Vec<TraceRow>)>> {
    let c = &config.mmcl_vs_mcem;
    let mut runs = Vec::new();
    for &l in &c.l_values {
        let cfg = LearningConfig {
            method: Method::Mmcl,
            l,
            seed: config.seed,
            ..config.learning.clone()
        };
        runs.push((
            format!("mmcl-L{l}"),
            train(&setup.model, &setup.theta0, &setup.train, &setup.test, &cfg)?,
        ));
    }
    let cfg = LearningConfig {
        method: Method::Mcem,
        seed: config.seed,
        ..config.learning.clone()
    };
    runs.push((
        "mcem".to_string(),
        train(&setup.model, &setup.theta0, &setup.train, &setup.test, &cfg)?,
    ));
    Ok(runs)
}

fn mmcl_vs_mcem(config: &ExperimentConfig) -> Result<Produced> {
    let setup = learning_setup(&config.mmcl_vs_mcem, config.seed)?;
    let runs = learning_runs(config, &setup)?;
    let mut t = Table::new(&["method", "epoch", "updates", "train_loglik", "test_loglik"]);
    for (name, trace) in &runs {
        for r in trace {
            t.rows.push(vec![
                name.clone(),
                r.epoch.to_string(),
                r.updates.to_string(),
                fmt_f64(r.train_loglik),
                r.test_loglik.map(fmt_f64).unwrap_or_default(),
            ]);
        }
    }
    let eval_seed = derive_seed(config.seed, 0xE7A1);
    let l_eval = config.learning.l_eval;
    let truth = match &setup.theta_true {
        Some(th) => Some(mean_log_likelihood(&setup.model, th, &setup.train, l_eval, eval_seed)?),
        None => None,
    };
    let finals: Vec<Value> = runs
        .iter()
        .map(|(name, trace)| {
            let last = trace.last().expect("trace has the initial row");
            json!({
                "method": name,
                "train_loglik": last.train_loglik,
                "test_loglik": last.test_loglik,
                "gap_to_truth": truth.map(|v| v - last.train_loglik),
                "theta": last.theta,
            })
        })
        .collect();
    let summary = json!({
        "experiment": "mmcl-vs-mcem",
        "seed": config.seed,
        "truth_train_loglik": truth,
        "independent_bernoulli_train_loglik": independent_bernoulli_loglik(&setup.train),
        "theta_true": setup.theta_true,
        "final": finals,
    });
    Ok((t, summary, setup.input_bytes))
}
