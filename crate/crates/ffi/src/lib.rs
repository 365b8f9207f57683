//! C ABI over the `dncp` library.
//!
//! Objects cross the boundary as opaque handles created by `dncp_model_*`
//! and `dncp_sample` and released by the matching `*_free`. Every fallible call
//! returns a [`DncpStatus`]; on failure, [`dncp_last_error`] describes the
//! most recent error on the calling thread. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use dncp::analysis::{cp_squared_correlation, dncp_squared_correlation, prefer_dncp, LocalFactorSummary};
use dncp::diagnostics::effective_sample_size;
use dncp::graph::{build_model, Assignment, FactorGraphModel, ModelFile};
use dncp::sampler::{ChainResult, HmcConfig, ModelSampler, Parameterization};
use dncp::zoo::build_lds_model;
use dncp::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DncpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Model = 4,
    Numeric = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DncpParameterization {
    Cp = 0,
    Dncp = 1,
    Mix = 2,
}

/// Sampler settings; obtain defaults from [`dncp_hmc_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DncpHmcConfig {
    pub leapfrog_steps: usize,
    pub initial_step_size: f64,
    pub target_accept_rate: f64,
    pub burn_in: usize,
    pub samples: usize,
    pub seed: u64,
    pub mix_rho: f64,
}

/// A model with fixed parameters and observations.
pub struct DncpModel {
    model: FactorGraphModel,
    theta: Vec<f64>,
    observed: Assignment,
}

/// Draws and statistics of a finished chain.
pub struct DncpChain {
    result: ChainResult,
    dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DncpStatus {
    match e {
        Error::Config(_) => DncpStatus::Config,
        Error::Io(_) | Error::BadMagic(_) | Error::TruncatedFile { .. } => DncpStatus::Io,
        Error::Domain(_) | Error::Sign(_) | Error::Shape(_) => DncpStatus::InvalidArgument,
        _ if e.exit_code() == 3 => DncpStatus::Numeric,
        _ => DncpStatus::Model,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (DncpStatus, String)>) -> DncpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DncpStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            DncpStatus::Panic
        }
    }
}

fn lib(e: Error) -> (DncpStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DncpStatus, String) {
    (DncpStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dncp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn dncp_hmc_config_default() -> DncpHmcConfig {
    let d = HmcConfig::default();
    DncpHmcConfig {
        leapfrog_steps: d.leapfrog_steps,
        initial_step_size: d.initial_step_size,
        target_accept_rate: d.target_accept_rate,
        burn_in: d.burn_in,
        samples: d.samples,
        seed: d.seed,
        mix_rho: d.mix_rho,
    }
}

/// Parse a TOML model file (nodes, parameters, `theta` and `observed`
/// tables) into a new handle.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dncp_model_from_toml(toml: *const c_char, out: *mut *mut DncpModel) -> DncpStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|_| (DncpStatus::InvalidArgument, "toml is not UTF-8".to_string()))?;
        let file = ModelFile::from_toml(text).map_err(lib)?;
        let model = build_model(&file.spec()).map_err(lib)?;
        let theta = model.layout().theta_from_named(&file.theta).map_err(lib)?;
        let mut observed = Assignment::new();
        for n in model.observed_nodes() {
            let name = &model.node(n).name;
            let v = file
                .observed
                .get(name)
                .ok_or_else(|| (DncpStatus::Config, format!("no value for observed node `{name}`")))?;
            observed.set(n, v.clone());
        }
        *out = Box::into_raw(Box::new(DncpModel { model, theta, observed }));
        Ok(())
    })
}

/// Two-step linear-Gaussian chain with observations `x[0]`, `x[1]`.
///
/// # Safety
/// `x` must point to two doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dncp_model_lds(
    sigma_x: f64,
    sigma_z: f64,
    x: *const f64,
    out: *mut *mut DncpModel,
) -> DncpStatus {
    guard(|| {
        if x.is_null() {
            return Err(null("x"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let model = build_lds_model(sigma_x, sigma_z).map_err(lib)?;
        let mut observed = Assignment::new();
        observed.set(model.require("x1").map_err(lib)?, vec![*x]);
        observed.set(model.require("x2").map_err(lib)?, vec![*x.add(1)]);
        *out = Box::into_raw(Box::new(DncpModel {
            model,
            theta: Vec::new(),
            observed,
        }));
        Ok(())
    })
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dncp_model_free(model: *mut DncpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of sampled latent coordinates.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dncp_model_num_latent_coords(model: *const DncpModel, out: *mut usize) -> DncpStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.model.num_free_coords();
        Ok(())
    })
}

/// Squared parent-child posterior correlations of the local Gaussian
/// approximation under both parameterizations.
///
/// # Safety
/// `rho2_cp` and `rho2_dncp` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dncp_squared_correlations(
    alpha: f64,
    beta: f64,
    w: f64,
    sigma: f64,
    rho2_cp: *mut f64,
    rho2_dncp: *mut f64,
) -> DncpStatus {
    guard(|| {
        if rho2_cp.is_null() || rho2_dncp.is_null() {
            return Err(null("output"));
        }
        let s = LocalFactorSummary::new(alpha, beta, w, sigma);
        *rho2_cp = cp_squared_correlation(&s).map_err(lib)?;
        *rho2_dncp = dncp_squared_correlation(&s).map_err(lib)?;
        Ok(())
    })
}

/// Writes 1 if the non-centered form has the smaller correlation, else 0.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dncp_prefer_dncp(sigma: f64, beta: f64, out: *mut i32) -> DncpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = prefer_dncp(sigma, beta).map_err(lib)? as i32;
        Ok(())
    })
}

/// Run a chain; `config` may be null for defaults.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dncp_sample(
    model: *const DncpModel,
    param: DncpParameterization,
    config: *const DncpHmcConfig,
    out: *mut *mut DncpChain,
) -> DncpStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = config.as_ref().copied().unwrap_or_else(|| dncp_hmc_config_default());
        let cfg = HmcConfig {
            leapfrog_steps: c.leapfrog_steps,
            initial_step_size: c.initial_step_size,
            target_accept_rate: c.target_accept_rate,
            burn_in: c.burn_in,
            samples: c.samples,
            seed: c.seed,
            mix_rho: c.mix_rho,
        };
        let p = match param {
            DncpParameterization::Cp => Parameterization::Cp,
            DncpParameterization::Dncp => Parameterization::Dncp,
            DncpParameterization::Mix => Parameterization::Mix,
        };
        let mut s = ModelSampler::new(&m.model, &m.theta, &m.observed).map_err(lib)?;
        let result = s.run(p, &cfg, None).map_err(lib)?;
        *out = Box::into_raw(Box::new(DncpChain { dim: s.dim(), result }));
        Ok(())
    })
}

/// Release a chain handle. Null is ignored.
///
/// # Safety
/// `chain` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dncp_chain_free(chain: *mut DncpChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Number of kept draws and coordinates per draw.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dncp_chain_shape(chain: *const DncpChain, samples: *mut usize, dim: *mut usize) -> DncpStatus {
    guard(|| {
        let c = chain.as_ref().ok_or_else(|| null("chain"))?;
        if samples.is_null() || dim.is_null() {
            return Err(null("output"));
        }
        *samples = c.result.draws.len();
        *dim = c.dim;
        Ok(())
    })
}

/// Copy the draws, row-major (`samples × dim`), into `buf` of length `len`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dncp_chain_draws(chain: *const DncpChain, buf: *mut f64, len: usize) -> DncpStatus {
    guard(|| {
        let c = chain.as_ref().ok_or_else(|| null("chain"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let need = c.result.draws.len() * c.dim;
        if len < need {
            return Err((DncpStatus::BufferTooSmall, format!("need {need} doubles, got {len}")));
        }
        let out = std::slice::from_raw_parts_mut(buf, need);
        for (row, d) in out.chunks_mut(c.dim.max(1)).zip(&c.result.draws) {
            row.copy_from_slice(d);
        }
        Ok(())
    })
}

/// Acceptance rate over the kept draws.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dncp_chain_accept_rate(chain: *const DncpChain, out: *mut f64) -> DncpStatus {
    guard(|| {
        let c = chain.as_ref().ok_or_else(|| null("chain"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = c.result.accept_rate_after_burn_in();
        Ok(())
    })
}

/// Effective sample size of a scalar series of length `n`.
///
/// # Safety
/// `series` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dncp_effective_sample_size(series: *const f64, n: usize, out: *mut f64) -> DncpStatus {
    guard(|| {
        if series.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        *out = effective_sample_size(std::slice::from_raw_parts(series, n)).map_err(lib)?;
        Ok(())
    })
}
