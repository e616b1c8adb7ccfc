//! C ABI for steincv.
//!
//! Matrices cross the boundary as row-major `double` arrays with explicit
//! dimensions. Every function returns a [`SteincvStatus`]; on failure a
//! description is available from [`steincv_last_error_message`] on the same
//! thread. Objects that outlive a call are opaque handles released by their
//! `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use steincv::basis::basis_size;
use steincv::ensemble::{self, EnsembleConfig, EnsembleModel, Preset, Selection, WeightScheme};
use steincv::method::MethodSpec;
use steincv::regression::{IntegrandMatrix, Penalty};
use steincv::stein::{DesignMatrix, SampleSet};
use steincv::zvcv::{fit_zvcv, fit_zvcv_regularised, vanilla_mc, LambdaChoice};
use steincv::Error;

/// Result of every call. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteincvStatus {
    Ok = 0,
    NullPointer = 1,
    Shape = 2,
    TooFewSamples = 3,
    Unidentifiable = 4,
    Singular = 5,
    NonConvergence = 6,
    InvalidArgument = 7,
    NonFinite = 8,
    NotPositiveDefinite = 9,
    Parse = 10,
    Overflow = 11,
    Io = 12,
    Panic = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteincvPenalty {
    Ridge = 0,
    Lasso = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteincvPreset {
    /// Semi-exact columns, all rows, uniform weights.
    Sa = 0,
    /// Semi-exact columns, row subsampling, uniform weights.
    Do = 1,
    /// Semi-exact columns, all rows, inverse residual variance weights.
    Mo = 2,
    Custom = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteincvSelection {
    Srswor = 0,
    SemiExact = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteincvWeights {
    Uniform = 0,
    InverseResidualVariance = 1,
}

/// Ensemble settings. Zero `q_base` or `j_star` picks the default.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteincvEnsembleConfig {
    pub preset: SteincvPreset,
    pub learners: usize,
    pub q_max: u32,
    pub q_base: u32,
    pub j_star: usize,
    pub row_fraction: f64,
    pub selection: SteincvSelection,
    pub weights: SteincvWeights,
    pub seed: u64,
}

/// Samples and their log-density gradients.
pub struct SteincvSamples {
    inner: SampleSet,
}

/// A fitted ensemble together with the design and integrands it was fitted on.
pub struct SteincvEnsemble {
    model: EnsembleModel,
    design: DesignMatrix,
    integrands: IntegrandMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SteincvStatus {
    match err {
        Error::DimensionMismatch { .. } => SteincvStatus::Shape,
        Error::TooFewSamples { .. } => SteincvStatus::TooFewSamples,
        Error::Unidentifiable { .. } => SteincvStatus::Unidentifiable,
        Error::Singular { .. } => SteincvStatus::Singular,
        Error::NonConvergence { .. } => SteincvStatus::NonConvergence,
        Error::InvalidArgument(_) => SteincvStatus::InvalidArgument,
        Error::NonFinite { .. } => SteincvStatus::NonFinite,
        Error::NotPositiveDefinite => SteincvStatus::NotPositiveDefinite,
        Error::Parse(_) => SteincvStatus::Parse,
        Error::Overflow(_) => SteincvStatus::Overflow,
        Error::Io(_) => SteincvStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `body`, converting errors and panics into a status and the thread's last error.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> SteincvStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SteincvStatus::Ok
        }
        Ok(Err(Failure::Null(name))) => {
            set_last_error(format!("null pointer passed as `{name}`"));
            SteincvStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            SteincvStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: the caller guarantees a non-null pointer refers to a live value.
    unsafe { p.as_ref() }.ok_or(Failure::Null(name))
}

fn out_ptr<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: as above, for a writable location.
    unsafe { p.as_mut() }.ok_or(Failure::Null(name))
}

fn slice<'a>(p: *const f64, len: usize, name: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    // SAFETY: the caller guarantees `len` readable doubles at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a>(p: *mut f64, len: usize, name: &'static str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    // SAFETY: the caller guarantees `len` writable doubles at `p`.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn element_count(rows: usize, cols: usize) -> Result<usize, Failure> {
    rows.checked_mul(cols)
        .ok_or_else(|| Error::Overflow("matrix element count").into())
}

fn row_major(p: *const f64, rows: usize, cols: usize, name: &'static str) -> Result<DMatrix<f64>, Failure> {
    let data = slice(p, element_count(rows, cols)?, name)?;
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

fn integrands(p: *const f64, rows: usize, cols: usize) -> Result<IntegrandMatrix, Failure> {
    Ok(IntegrandMatrix::new(row_major(p, rows, cols, "f")?)?)
}

fn write_values(out: *mut f64, values: &[f64]) -> Result<(), Failure> {
    slice_mut(out, values.len(), "out")?.copy_from_slice(values);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn steincv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL after a success.
///
/// The pointer stays valid until the next steincv call on the same thread.
#[no_mangle]
pub extern "C" fn steincv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Number of control-variate columns for `dim` variables up to total order `order`.
///
/// # Safety
/// `out` must point to a writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn steincv_basis_size(dim: usize, order: u32, out: *mut usize) -> SteincvStatus {
    guard(|| {
        *out_ptr(out, "out")? = basis_size(dim, order)?;
        Ok(())
    })
}

/// Copies `n × dim` row-major samples and gradients into a new handle.
///
/// # Safety
/// `thetas` and `grads` must each point to `n * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn steincv_samples_new(
    thetas: *const f64,
    grads: *const f64,
    n: usize,
    dim: usize,
    out: *mut *mut SteincvSamples,
) -> SteincvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let inner = SampleSet::new(row_major(thetas, n, dim, "thetas")?, row_major(grads, n, dim, "grads")?)?;
        *out = Box::into_raw(Box::new(SteincvSamples { inner }));
        Ok(())
    })
}

/// # Safety
/// `samples` must come from [`steincv_samples_new`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn steincv_samples_free(samples: *mut SteincvSamples) {
    if !samples.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(samples))));
    }
}

/// # Safety
/// `samples` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn steincv_samples_shape(samples: *const SteincvSamples, n: *mut usize, dim: *mut usize) -> SteincvStatus {
    guard(|| {
        let s = &non_null(samples, "samples")?.inner;
        *out_ptr(n, "n")? = s.len();
        *out_ptr(dim, "dim")? = s.dim();
        Ok(())
    })
}

/// Plain Monte Carlo: column means of the `n × t` row-major integrand matrix into `out[t]`.
///
/// # Safety
/// `f` must point to `n * t` doubles and `out` to `t` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn steincv_mc(f: *const f64, n: usize, t: usize, out: *mut f64) -> SteincvStatus {
    guard(|| {
        let f = integrands(f, n, t)?;
        write_values(out, &vanilla_mc(&f).values)
    })
}

/// Zero-variance control variates of total order `order`.
///
/// `f` is `n × t` row-major with `n` the number of samples; `out` receives `t` estimates.
///
/// # Safety
/// `samples` must be a live handle, `f` must point to `n * t` doubles and `out` to `t` doubles.
#[no_mangle]
pub unsafe extern "C" fn steincv_zvcv(
    samples: *const SteincvSamples,
    f: *const f64,
    t: usize,
    order: u32,
    out: *mut f64,
) -> SteincvStatus {
    guard(|| {
        let s = &non_null(samples, "samples")?.inner;
        let f = integrands(f, s.len(), t)?;
        write_values(out, &fit_zvcv(s, &f, order)?.values)
    })
}

/// Ridge or LASSO regularised control variates.
///
/// With `folds == 0` every integrand uses `lambda`; otherwise the penalty is chosen per
/// integrand by `folds`-fold cross-validation seeded by `seed` and `lambda` is ignored.
/// `lambdas_out` may be NULL; if not, it receives the `t` penalties used.
///
/// # Safety
/// Pointers as for [`steincv_zvcv`]; `lambdas_out` is NULL or points to `t` doubles.
#[no_mangle]
pub unsafe extern "C" fn steincv_zvcv_regularised(
    samples: *const SteincvSamples,
    f: *const f64,
    t: usize,
    order: u32,
    penalty: SteincvPenalty,
    lambda: f64,
    folds: usize,
    seed: u64,
    out: *mut f64,
    lambdas_out: *mut f64,
) -> SteincvStatus {
    guard(|| {
        let s = &non_null(samples, "samples")?.inner;
        let f = integrands(f, s.len(), t)?;
        let penalty = match penalty {
            SteincvPenalty::Ridge => Penalty::Ridge,
            SteincvPenalty::Lasso => Penalty::Lasso,
        };
        let choice = if folds == 0 {
            LambdaChoice::Fixed { lambda }
        } else {
            LambdaChoice::Cv { folds, seed }
        };
        let est = fit_zvcv_regularised(s, &f, order, penalty, choice)?;
        write_values(out, &est.values)?;
        if !lambdas_out.is_null() {
            write_values(lambdas_out, est.diagnostics.lambda.as_deref().unwrap_or_default())?;
        }
        Ok(())
    })
}

/// Applies a method given in the command-line spec syntax, e.g. `zv:q=2` or `sa:k=25`.
///
/// # Safety
/// `method` must be a NUL-terminated string; other pointers as for [`steincv_zvcv`].
#[no_mangle]
pub unsafe extern "C" fn steincv_estimate(
    samples: *const SteincvSamples,
    f: *const f64,
    t: usize,
    method: *const c_char,
    seed: u64,
    out: *mut f64,
) -> SteincvStatus {
    guard(|| {
        let s = &non_null(samples, "samples")?.inner;
        if method.is_null() {
            return Err(Failure::Null("method"));
        }
        let spec = CStr::from_ptr(method)
            .to_str()
            .map_err(|_| Error::Parse("method spec is not UTF-8".into()))?;
        let method: MethodSpec = spec.parse()?;
        let f = integrands(f, s.len(), t)?;
        write_values(out, &method.apply(s, &f, seed)?.values)
    })
}

fn preset_config(preset: SteincvPreset, learners: usize, seed: u64) -> EnsembleConfig {
    EnsembleConfig::new(
        match preset {
            SteincvPreset::Sa => Preset::Sa,
            SteincvPreset::Do => Preset::Do,
            SteincvPreset::Mo => Preset::Mo,
            SteincvPreset::Custom => Preset::Custom,
        },
        learners,
        seed,
    )
}

/// Default settings for a preset.
#[no_mangle]
pub extern "C" fn steincv_ensemble_config_default(preset: SteincvPreset, learners: usize, seed: u64) -> SteincvEnsembleConfig {
    let c = preset_config(preset, learners, seed);
    SteincvEnsembleConfig {
        preset,
        learners,
        q_max: c.q_max,
        q_base: 0,
        j_star: 0,
        row_fraction: c.row_fraction,
        selection: match c.selection {
            Selection::Srswor => SteincvSelection::Srswor,
            Selection::SemiExact => SteincvSelection::SemiExact,
        },
        weights: match c.weight_scheme {
            WeightScheme::Uniform => SteincvWeights::Uniform,
            WeightScheme::InverseResidualVariance => SteincvWeights::InverseResidualVariance,
        },
        seed,
    }
}

fn to_config(c: &SteincvEnsembleConfig) -> EnsembleConfig {
    let mut cfg = preset_config(c.preset, c.learners, c.seed);
    cfg.q_max = c.q_max;
    cfg.q_base = (c.q_base > 0).then_some(c.q_base);
    cfg.j_star = (c.j_star > 0).then_some(c.j_star);
    cfg.row_fraction = c.row_fraction;
    cfg.selection = match c.selection {
        SteincvSelection::Srswor => Selection::Srswor,
        SteincvSelection::SemiExact => Selection::SemiExact,
    };
    cfg.weight_scheme = match c.weights {
        SteincvWeights::Uniform => WeightScheme::Uniform,
        SteincvWeights::InverseResidualVariance => WeightScheme::InverseResidualVariance,
    };
    cfg
}

/// Fits an ensemble of control-variate learners; the integrands are copied into the handle.
///
/// # Safety
/// `config` must point to a valid config; other pointers as for [`steincv_zvcv`].
#[no_mangle]
pub unsafe extern "C" fn steincv_ensemble_fit(
    samples: *const SteincvSamples,
    f: *const f64,
    t: usize,
    config: *const SteincvEnsembleConfig,
    out: *mut *mut SteincvEnsemble,
) -> SteincvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let s = &non_null(samples, "samples")?.inner;
        let cfg = to_config(non_null(config, "config")?);
        let f = integrands(f, s.len(), t)?;
        let (model, design) = ensemble::fit_ensemble(s, &f, &cfg)?;
        *out = Box::into_raw(Box::new(SteincvEnsemble { model, design, integrands: f }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`steincv_ensemble_fit`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn steincv_ensemble_free(model: *mut SteincvEnsemble) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// Number of learners and of integrands in a fitted ensemble.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn steincv_ensemble_shape(
    model: *const SteincvEnsemble,
    learners: *mut usize,
    integrands: *mut usize,
) -> SteincvStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        *out_ptr(learners, "learners")? = m.model.learners.len();
        *out_ptr(integrands, "integrands")? = m.integrands.ncols();
        Ok(())
    })
}

/// Aggregated estimate per integrand into `out[t]`.
///
/// # Safety
/// `model` must be a live handle and `out` must hold as many doubles as there are integrands.
#[no_mangle]
pub unsafe extern "C" fn steincv_ensemble_estimate(model: *const SteincvEnsemble, out: *mut f64) -> SteincvStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let est = ensemble::ensemble_estimate(&m.model, &m.design, &m.integrands)?;
        write_values(out, &est.values)
    })
}

/// Each learner's own estimate, row-major `learners × integrands`.
///
/// # Safety
/// `model` must be a live handle and `out` must hold `learners * integrands` doubles.
#[no_mangle]
pub unsafe extern "C" fn steincv_ensemble_learner_estimates(model: *const SteincvEnsemble, out: *mut f64) -> SteincvStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let per = m.model.learner_estimates(&m.design, &m.integrands)?;
        write_values(out, &per.concat())
    })
}

/// Learner weights, row-major `learners × integrands`.
///
/// # Safety
/// As for [`steincv_ensemble_learner_estimates`].
#[no_mangle]
pub unsafe extern "C" fn steincv_ensemble_weights(model: *const SteincvEnsemble, out: *mut f64) -> SteincvStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let w: Vec<f64> = m.model.learners.iter().flat_map(|l| l.weight.iter().copied()).collect();
        write_values(out, &w)
    })
}
