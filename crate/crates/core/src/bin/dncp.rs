use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use dncp::analysis::{
    cp_squared_correlation, dncp_squared_correlation, hessian_in_coords, lds_correlations, prefer_dncp,
    squared_correlation_from_hessian, LocalFactorSummary, Matrix,
};
use dncp::diagnostics::ess_report;
use dncp::experiments::{fmt_f64, learning_setup, run_experiment, ExperimentConfig, ExperimentKind};
use dncp::graph::{ancestral_sample, build_model, FactorGraphModel, ModelFile};
use dncp::learning::{train, LearningConfig, Method};
use dncp::reparam::Reparameterized;
use dncp::rng::seeded;
use dncp::sampler::{HmcConfig, ModelSampler, Parameterization};
use dncp::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dncp",
    version,
    about = "Centered and non-centered parameterizations for HMC in Bayesian networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration or model file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Squared parent-child posterior correlations under CP and DNCP.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        beta: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        w: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Analyze the two-step linear-Gaussian chain instead.
        #[arg(long)]
        lds: bool,
        #[arg(long, default_value_t = 1.0)]
        sigma_x: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_z: f64,
    },
    /// Run HMC on a model file.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = ParamArg::Mix)]
        param: ParamArg,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
    },
    /// Train the generative model of the learning comparison with one method.
    Learn {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = MethodArg::Mmcl)]
        method: MethodArg,
    },
    /// Run a named experiment: correlation-scan, lds, dbn-ess, mmcl-vs-mcem.
    Experiment {
        name: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    Cp,
    Dncp,
    Mix,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mmcl,
    Mcem,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn experiment_config(common: &Common) -> Result<ExperimentConfig> {
    let mut c = match &common.config {
        Some(p) => ExperimentConfig::from_toml(&read(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        c.seed = s;
    }
    Ok(c)
}

fn print_json(v: &serde_json::Value) {
    // a closed stdout (e.g. piped into `head`) is not an error
    let _ = writeln!(
        std::io::stdout(),
        "{}",
        serde_json::to_string_pretty(v).expect("json values serialize")
    );
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Analyze {
            common,
            alpha,
            beta,
            w,
            sigma,
            lds,
            sigma_x,
            sigma_z,
        } => {
            if let Some(p) = &common.config {
                return analyze_model(p, common.seed.unwrap_or(0));
            }
            if lds {
                let r = lds_correlations(sigma_x, sigma_z)?;
                print_json(&serde_json::to_value(&r).expect("report serializes"));
                return Ok(());
            }
            let (Some(a), Some(b), Some(w), Some(s)) = (alpha, beta, w, sigma) else {
                return Err(Error::Config(
                    "analyze needs --alpha --beta --w --sigma, --lds, or --config".into(),
                ));
            };
            let f = LocalFactorSummary::new(a, b, w, s);
            print_json(&json!({
                "rho2_cp": cp_squared_correlation(&f)?,
                "rho2_dncp": dncp_squared_correlation(&f)?,
                "prefer_dncp": prefer_dncp(s, b)?,
                "hessian_cp": f.cp_hessian(),
                "hessian_dncp": f.dncp_hessian(),
            }));
            Ok(())
        }
        Command::Sample {
            common,
            param,
            samples,
            burn_in,
        } => sample(&common, param, samples, burn_in),
        Command::Learn { common, method } => learn(&common, method),
        Command::Experiment { name, common } => {
            let mut c = experiment_config(&common)?;
            c.experiment = name.parse::<ExperimentKind>()?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out").join(&name));
            let r = run_experiment(&c, &out)?;
            print_json(&r.summary);
            eprintln!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn load_model_file(path: &Path) -> Result<(ModelFile, FactorGraphModel, Vec<f64>)> {
    let file = ModelFile::from_toml(&read(path)?)?;
    let model = build_model(&file.spec())?;
    let theta = model.layout().theta_from_named(&file.theta)?;
    Ok((file, model, theta))
}

/// Pairwise squared correlations; `None` where the pair's Hessian block is
/// not negative definite, as happens away from a mode of a nonlinear model.
fn squared_correlations(h: &Matrix) -> Result<Vec<Vec<Option<f64>>>> {
    let n = h.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| match squared_correlation_from_hessian(h, i, j) {
                    _ if i == j => Ok(Some(1.0)),
                    Ok(r) => Ok(Some(r)),
                    Err(Error::NotNegativeDefinite) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect()
        })
        .collect()
}

/// Hessian-based squared correlations of a model's posterior at an
/// ancestral draw with the file's observations substituted.
fn analyze_model(path: &Path, seed: u64) -> Result<()> {
    let (file, model, theta) = load_model_file(path)?;
    let mut point = ancestral_sample(&model, &theta, &mut seeded(seed))?;
    for (name, v) in &file.observed {
        point.set(model.require(name)?, v.clone());
    }
    let cp = Reparameterized::centered(&model)?;
    let dncp = Reparameterized::non_centered(&model)?;
    let hc = hessian_in_coords(&cp, &theta, &point)?;
    let hd = hessian_in_coords(&dncp, &theta, &dncp.eps_from_z(&theta, &point)?)?;
    let names: Vec<&str> = cp.latents().iter().map(|n| model.node(*n).name.as_str()).collect();
    print_json(&json!({
        "latents": names,
        "rho2_cp": squared_correlations(&hc)?,
        "rho2_dncp": squared_correlations(&hd)?,
    }));
    Ok(())
}

fn sample(common: &Common, param: ParamArg, samples: Option<usize>, burn_in: Option<usize>) -> Result<()> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("sample needs --config <model file>".into()))?;
    let (file, model, theta) = load_model_file(path)?;
    let mut observed = dncp::graph::Assignment::new();
    for n in model.observed_nodes() {
        let name = &model.node(n).name;
        let v = file
            .observed
            .get(name)
            .ok_or_else(|| Error::Config(format!("no value for observed node `{name}`")))?;
        observed.set(n, v.clone());
    }
    let mut cfg = HmcConfig::default();
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(s) = samples {
        cfg.samples = s;
    }
    if let Some(b) = burn_in {
        cfg.burn_in = b;
    }
    let p = match param {
        ParamArg::Cp => Parameterization::Cp,
        ParamArg::Dncp => Parameterization::Dncp,
        ParamArg::Mix => Parameterization::Mix,
    };
    let mut sampler = ModelSampler::new(&model, &theta, &observed)?;
    let res = sampler.run(p, &cfg, None)?;
    let ess = ess_report(&res.draws, 50)?;
    let mut header = Vec::new();
    for &n in sampler.cp.latents() {
        let spec = model.node(n);
        for k in 0..spec.dim {
            header.push(format!("{}[{k}]", spec.name));
        }
    }
    let summary = json!({
        "parameterization": p.name(),
        "seed": cfg.seed,
        "accept_rate": res.accept_rate_after_burn_in(),
        "final_step_size": res.step_sizes.last(),
        "ess_median": ess.median,
        "ess_min": ess.min,
        "ess_max": ess.max,
        "ess": ess.per_coordinate,
        "coordinates": header,
    });
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out)?;
        let mut w = csv::Writer::from_path(out.join("draws.csv")).map_err(|e| Error::Io(e.to_string()))?;
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(&header).map_err(io)?;
        for d in &res.draws {
            w.write_record(d.iter().map(|v| fmt_f64(*v))).map_err(io)?;
        }
        w.flush()?;
        std::fs::write(
            out.join("summary.json"),
            serde_json::to_vec_pretty(&summary).expect("json"),
        )?;
    }
    print_json(&summary);
    Ok(())
}

fn learn(common: &Common, method: MethodArg) -> Result<()> {
    let c = experiment_config(common)?;
    let setup = learning_setup(&c.mmcl_vs_mcem, c.seed)?;
    let cfg = LearningConfig {
        method: match method {
            MethodArg::Mmcl => Method::Mmcl,
            MethodArg::Mcem => Method::Mcem,
        },
        seed: c.seed,
        ..c.learning.clone()
    };
    let trace = train(&setup.model, &setup.theta0, &setup.train, &setup.test, &cfg)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out").join("learn"));
    std::fs::create_dir_all(&out)?;
    let mut w = csv::Writer::from_path(out.join("trace.csv")).map_err(|e| Error::Io(e.to_string()))?;
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["epoch", "updates", "train_loglik", "test_loglik"])
        .map_err(io)?;
    for r in &trace {
        w.write_record([
            r.epoch.to_string(),
            r.updates.to_string(),
            fmt_f64(r.train_loglik),
            r.test_loglik.map(fmt_f64).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    let last = trace.last().expect("trace has the initial row");
    print_json(&json!({
        "method": format!("{:?}", cfg.method).to_lowercase(),
        "epochs": cfg.epochs,
        "final_train_loglik": last.train_loglik,
        "final_test_loglik": last.test_loglik,
        "theta": last.theta,
    }));
    Ok(())
}
