//! C ABI for the romcex toolkit.
//!
//! The surface follows one pattern throughout: constructors return an
//! opaque handle pointer (null on failure), every other call returns a
//! [`RomcexStatus`], and the most recent failure message on the calling
//! thread is readable through [`romcex_last_error_message`]. Handles are
//! freed with their matching `_free` function exactly once; all other
//! functions borrow them.
//!
//! Matrices cross the boundary as contiguous `double` arrays in
//! column-major order: column `k` (one snapshot, one ensemble member)
//! occupies `dim` consecutive entries starting at `k * dim`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use romcex::bayes::{
    cex_polynomial, gmkf_update, gpe_predict, gpe_train, sampled_loss, EnsembleState, GpeEmulator,
    KernelKind, KernelSpec, MeanMode,
};
use romcex::linalg::DenseMatrix;
use romcex::parametric_map::{kle, reconstruct, reconstruction_energy_error, KleBasis, SnapshotSet};
use romcex::Error;

/// Result of every fallible call. Numeric values match the process exit
/// codes of the command-line tool for the shared classes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RomcexStatus {
    /// The call succeeded.
    RomcexOk = 0,
    /// Rejected input: bad dimensions, non-finite values, bad arguments.
    RomcexInvalidInput = 2,
    /// The computation failed numerically (not positive definite,
    /// no convergence, degenerate data).
    RomcexNumericalFailure = 3,
    /// File or serialization failure.
    RomcexIoFailure = 4,
    /// A required pointer argument was null.
    RomcexNullPointer = 5,
    /// The call panicked; the handle may be poisoned and must only be
    /// freed.
    RomcexPanic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized: String = message.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(e: &Error) -> RomcexStatus {
    set_error(&e.to_string());
    match e.exit_code() {
        3 => RomcexStatus::RomcexNumericalFailure,
        4 => RomcexStatus::RomcexIoFailure,
        _ => RomcexStatus::RomcexInvalidInput,
    }
}

fn null_error(what: &str) -> RomcexStatus {
    set_error(&format!("{what} must not be null"));
    RomcexStatus::RomcexNullPointer
}

fn guard<T>(run: impl FnOnce() -> Result<T, RomcexStatus>) -> Result<T, RomcexStatus> {
    match catch_unwind(AssertUnwindSafe(run)) {
        Ok(r) => r,
        Err(_) => {
            set_error("internal panic");
            Err(RomcexStatus::RomcexPanic)
        }
    }
}

/// Message for the most recent failure on this thread.
///
/// The pointer stays valid until the next failing romcex call on the
/// same thread. Never free it.
#[no_mangle]
pub extern "C" fn romcex_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn romcex_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ── snapshot sets ───────────────────────────────────────────────────

/// Opaque weighted snapshot collection.
pub struct RomcexSnapshots {
    inner: SnapshotSet,
}

/// Builds a snapshot set from `count` state columns of length
/// `state_dim` and matching parameter rows of length `param_dim`.
///
/// `states` is column-major (`state_dim * count` doubles); `params` is
/// row-contiguous per sample (`param_dim * count` doubles, sample `k`
/// at `k * param_dim`). `weights` may be null for uniform weighting;
/// otherwise it holds `count` positive values summing to one.
///
/// Returns null on failure; see [`romcex_last_error_message`].
///
/// # Safety
/// `states` and `params` must point to readable arrays of the sizes
/// above, and `weights`, when non-null, to `count` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn romcex_snapshots_create(
    state_dim: usize,
    param_dim: usize,
    count: usize,
    states: *const f64,
    params: *const f64,
    weights: *const f64,
) -> *mut RomcexSnapshots {
    let build = || -> Result<RomcexSnapshots, RomcexStatus> {
        if states.is_null() {
            return Err(null_error("states"));
        }
        if params.is_null() {
            return Err(null_error("params"));
        }
        if state_dim == 0 || param_dim == 0 || count == 0 {
            set_error("state_dim, param_dim and count must be positive");
            return Err(RomcexStatus::RomcexInvalidInput);
        }
        let s = slice::from_raw_parts(states, state_dim * count);
        let p = slice::from_raw_parts(params, param_dim * count);
        let matrix = DenseMatrix::from_fn(state_dim, count, |i, k| s[k * state_dim + i]);
        let params_vec: Vec<Vec<f64>> = (0..count)
            .map(|k| p[k * param_dim..(k + 1) * param_dim].to_vec())
            .collect();
        let set = if weights.is_null() {
            SnapshotSet::uniform(params_vec, matrix)
        } else {
            let w = slice::from_raw_parts(weights, count);
            SnapshotSet::new(params_vec, matrix, w.to_vec())
        }
        .map_err(|e| status_of(&e))?;
        Ok(RomcexSnapshots { inner: set })
    };
    match guard(build) {
        Ok(h) => Box::into_raw(Box::new(h)),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Number of snapshots in the set, or 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle from [`romcex_snapshots_create`].
#[no_mangle]
pub unsafe extern "C" fn romcex_snapshots_count(set: *const RomcexSnapshots) -> usize {
    if set.is_null() {
        return 0;
    }
    (*set).inner.len()
}

/// State dimension of the set, or 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle from [`romcex_snapshots_create`].
#[no_mangle]
pub unsafe extern "C" fn romcex_snapshots_state_dim(set: *const RomcexSnapshots) -> usize {
    if set.is_null() {
        return 0;
    }
    (*set).inner.state_dim()
}

/// Frees a snapshot handle. Null is ignored.
///
/// # Safety
/// `set` must be null or an unfreed handle from
/// [`romcex_snapshots_create`]; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn romcex_snapshots_free(set: *mut RomcexSnapshots) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

// ── spectral basis ──────────────────────────────────────────────────

/// Opaque truncated spectral expansion of a snapshot set.
pub struct RomcexBasis {
    inner: KleBasis,
}

/// Decomposes a snapshot set, keeping singular values above
/// `tol * largest` (pass 0 for every numerically nonzero one).
///
/// Returns null on failure.
///
/// # Safety
/// `set` must be a live handle from [`romcex_snapshots_create`].
#[no_mangle]
pub unsafe extern "C" fn romcex_basis_create(
    set: *const RomcexSnapshots,
    tol: f64,
) -> *mut RomcexBasis {
    let build = || -> Result<RomcexBasis, RomcexStatus> {
        if set.is_null() {
            return Err(null_error("set"));
        }
        let basis = kle(&(*set).inner, tol).map_err(|e| status_of(&e))?;
        Ok(RomcexBasis { inner: basis })
    };
    match guard(build) {
        Ok(h) => Box::into_raw(Box::new(h)),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Number of retained modes, or 0 for a null handle.
///
/// # Safety
/// `basis` must be null or a live handle from [`romcex_basis_create`].
#[no_mangle]
pub unsafe extern "C" fn romcex_basis_rank(basis: *const RomcexBasis) -> usize {
    if basis.is_null() {
        return 0;
    }
    (*basis).inner.rank()
}

/// Copies the singular values, descending, into `out`.
///
/// `out_len` must be at least the basis rank.
///
/// # Safety
/// `basis` must be a live handle and `out` writable for `out_len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn romcex_basis_singular_values(
    basis: *const RomcexBasis,
    out: *mut f64,
    out_len: usize,
) -> RomcexStatus {
    let run = || -> Result<(), RomcexStatus> {
        if basis.is_null() {
            return Err(null_error("basis"));
        }
        if out.is_null() {
            return Err(null_error("out"));
        }
        let sigmas = &(*basis).inner.sigmas;
        if out_len < sigmas.len() {
            set_error(&format!(
                "out_len {out_len} below the basis rank {}",
                sigmas.len()
            ));
            return Err(RomcexStatus::RomcexInvalidInput);
        }
        let target = slice::from_raw_parts_mut(out, sigmas.len());
        target.copy_from_slice(sigmas);
        Ok(())
    };
    match guard(run) {
        Ok(()) => RomcexStatus::RomcexOk,
        Err(s) => s,
    }
}

/// Reconstructs snapshot `sample_index` from the leading `rank` modes
/// into `out` (`out_len` must be at least the state dimension).
///
/// # Safety
/// `basis` must be a live handle and `out` writable for `out_len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn romcex_basis_reconstruct(
    basis: *const RomcexBasis,
    rank: usize,
    sample_index: usize,
    out: *mut f64,
    out_len: usize,
) -> RomcexStatus {
    let run = || -> Result<(), RomcexStatus> {
        if basis.is_null() {
            return Err(null_error("basis"));
        }
        if out.is_null() {
            return Err(null_error("out"));
        }
        let values =
            reconstruct(&(*basis).inner, rank, sample_index).map_err(|e| status_of(&e))?;
        if out_len < values.len() {
            set_error(&format!(
                "out_len {out_len} below the state dimension {}",
                values.len()
            ));
            return Err(RomcexStatus::RomcexInvalidInput);
        }
        slice::from_raw_parts_mut(out, values.len()).copy_from_slice(&values);
        Ok(())
    };
    match guard(run) {
        Ok(()) => RomcexStatus::RomcexOk,
        Err(s) => s,
    }
}

/// Weighted squared reconstruction error of the set at the given rank,
/// written to `out`.
///
/// # Safety
/// `basis` and `set` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn romcex_basis_energy_error(
    basis: *const RomcexBasis,
    set: *const RomcexSnapshots,
    rank: usize,
    out: *mut f64,
) -> RomcexStatus {
    let run = || -> Result<(), RomcexStatus> {
        if basis.is_null() {
            return Err(null_error("basis"));
        }
        if set.is_null() {
            return Err(null_error("set"));
        }
        if out.is_null() {
            return Err(null_error("out"));
        }
        let v = reconstruction_energy_error(&(*set).inner, &(*basis).inner, rank)
            .map_err(|e| status_of(&e))?;
        *out = v;
        Ok(())
    };
    match guard(run) {
        Ok(()) => RomcexStatus::RomcexOk,
        Err(s) => s,
    }
}

/// Frees a basis handle. Null is ignored.
///
/// # Safety
/// `basis` must be null or an unfreed handle from
/// [`romcex_basis_create`]; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn romcex_basis_free(basis: *mut RomcexBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

// ── emulator ────────────────────────────────────────────────────────

/// Opaque kriging emulator.
pub struct RomcexEmulator {
    inner: GpeEmulator,
}

/// Kernel family selector for [`romcex_emulator_train`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RomcexKernel {
    /// exp(-r^2 / (2 l^2))
    RomcexKernelSquaredExponential = 0,
    /// exp(-r / l)
    RomcexKernelExponential = 1,
}

/// Trains an emulator on `count` input/value pairs.
///
/// `inputs` holds `count` points of `input_dim` doubles each,
/// contiguously; `values` holds `count` targets of `value_dim` doubles.
/// A `length_scale` of 0 or below defers to the median pairwise
/// distance of the training inputs. Returns null on failure.
///
/// # Safety
/// `inputs` and `values` must point to readable arrays of
/// `count * input_dim` and `count * value_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn romcex_emulator_train(
    input_dim: usize,
    value_dim: usize,
    count: usize,
    inputs: *const f64,
    values: *const f64,
    kernel: RomcexKernel,
    length_scale: f64,
    amplitude: f64,
) -> *mut RomcexEmulator {
    let build = || -> Result<RomcexEmulator, RomcexStatus> {
        if inputs.is_null() {
            return Err(null_error("inputs"));
        }
        if values.is_null() {
            return Err(null_error("values"));
        }
        if input_dim == 0 || value_dim == 0 || count == 0 {
            set_error("input_dim, value_dim and count must be positive");
            return Err(RomcexStatus::RomcexInvalidInput);
        }
        let xs = slice::from_raw_parts(inputs, count * input_dim);
        let ys = slice::from_raw_parts(values, count * value_dim);
        let train_inputs: Vec<Vec<f64>> = (0..count)
            .map(|k| xs[k * input_dim..(k + 1) * input_dim].to_vec())
            .collect();
        let train_values: Vec<Vec<f64>> = (0..count)
            .map(|k| ys[k * value_dim..(k + 1) * value_dim].to_vec())
            .collect();
        let spec = KernelSpec {
            kind: match kernel {
                RomcexKernel::RomcexKernelSquaredExponential => KernelKind::SquaredExponential,
                RomcexKernel::RomcexKernelExponential => KernelKind::Exponential,
            },
            length_scale: if length_scale > 0.0 {
                Some(length_scale)
            } else {
                None
            },
            amplitude,
            cross_covariance: None,
        };
        let em = gpe_train(&train_inputs, &train_values, spec, MeanMode::ConstantFit)
            .map_err(|e| status_of(&e))?;
        Ok(RomcexEmulator { inner: em })
    };
    match guard(build) {
        Ok(h) => Box::into_raw(Box::new(h)),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Predicts at one point, writing `value_dim` doubles to `out`.
///
/// # Safety
/// `emulator` must be a live handle; `point` must hold `point_len`
/// readable doubles and `out` room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn romcex_emulator_predict(
    emulator: *const RomcexEmulator,
    point: *const f64,
    point_len: usize,
    out: *mut f64,
    out_len: usize,
) -> RomcexStatus {
    let run = || -> Result<(), RomcexStatus> {
        if emulator.is_null() {
            return Err(null_error("emulator"));
        }
        if point.is_null() {
            return Err(null_error("point"));
        }
        if out.is_null() {
            return Err(null_error("out"));
        }
        let p = slice::from_raw_parts(point, point_len);
        let y = gpe_predict(&(*emulator).inner, p).map_err(|e| status_of(&e))?;
        if out_len < y.len() {
            set_error(&format!("out_len {out_len} below the value dimension {}", y.len()));
            return Err(RomcexStatus::RomcexInvalidInput);
        }
        slice::from_raw_parts_mut(out, y.len()).copy_from_slice(&y);
        Ok(())
    };
    match guard(run) {
        Ok(()) => RomcexStatus::RomcexOk,
        Err(s) => s,
    }
}

/// Frees an emulator handle. Null is ignored.
///
/// # Safety
/// `emulator` must be null or an unfreed handle from
/// [`romcex_emulator_train`]; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn romcex_emulator_free(emulator: *mut RomcexEmulator) {
    if !emulator.is_null() {
        drop(Box::from_raw(emulator));
    }
}

// ── ensembles and the filter ────────────────────────────────────────

/// Opaque joint state/observation ensemble.
pub struct RomcexEnsemble {
    inner: EnsembleState,
}

/// Builds an ensemble of `count` members from column-major state
/// (`state_dim * count`) and observation (`obs_dim * count`) arrays.
///
/// Returns null on failure.
///
/// # Safety
/// `x` and `z` must point to readable arrays of the sizes above.
#[no_mangle]
pub unsafe extern "C" fn romcex_ensemble_create(
    state_dim: usize,
    obs_dim: usize,
    count: usize,
    x: *const f64,
    z: *const f64,
    seed: u64,
) -> *mut RomcexEnsemble {
    let build = || -> Result<RomcexEnsemble, RomcexStatus> {
        if x.is_null() {
            return Err(null_error("x"));
        }
        if z.is_null() {
            return Err(null_error("z"));
        }
        if state_dim == 0 || obs_dim == 0 || count == 0 {
            set_error("state_dim, obs_dim and count must be positive");
            return Err(RomcexStatus::RomcexInvalidInput);
        }
        let xs = slice::from_raw_parts(x, state_dim * count);
        let zs = slice::from_raw_parts(z, obs_dim * count);
        let xm = DenseMatrix::from_fn(state_dim, count, |i, k| xs[k * state_dim + i]);
        let zm = DenseMatrix::from_fn(obs_dim, count, |i, k| zs[k * obs_dim + i]);
        let ens = EnsembleState::new(xm, zm, seed).map_err(|e| status_of(&e))?;
        Ok(RomcexEnsemble { inner: ens })
    };
    match guard(build) {
        Ok(h) => Box::into_raw(Box::new(h)),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Conditions the ensemble on an observation, writing the updated
/// members column-major (`state_dim * count` doubles) to `out`.
///
/// # Safety
/// `ensemble` must be a live handle; `observation` must hold `obs_len`
/// readable doubles and `out` room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn romcex_ensemble_filter_update(
    ensemble: *const RomcexEnsemble,
    observation: *const f64,
    obs_len: usize,
    out: *mut f64,
    out_len: usize,
) -> RomcexStatus {
    let run = || -> Result<(), RomcexStatus> {
        if ensemble.is_null() {
            return Err(null_error("ensemble"));
        }
        if observation.is_null() {
            return Err(null_error("observation"));
        }
        if out.is_null() {
            return Err(null_error("out"));
        }
        let ens = &(*ensemble).inner;
        let y = slice::from_raw_parts(observation, obs_len);
        let update = gmkf_update(ens, y).map_err(|e| status_of(&e))?;
        let (d, n) = (update.updated.rows(), update.updated.cols());
        if out_len < d * n {
            set_error(&format!("out_len {out_len} below state_dim * count = {}", d * n));
            return Err(RomcexStatus::RomcexInvalidInput);
        }
        let target = slice::from_raw_parts_mut(out, d * n);
        for k in 0..n {
            for i in 0..d {
                target[k * d + i] = update.updated.get(i, k);
            }
        }
        Ok(())
    };
    match guard(run) {
        Ok(()) => RomcexStatus::RomcexOk,
        Err(s) => s,
    }
}

/// Mean squared prediction error of the best polynomial fit of the
/// given total degree, written to `out`.
///
/// # Safety
/// `ensemble` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn romcex_ensemble_polynomial_loss(
    ensemble: *const RomcexEnsemble,
    degree: usize,
    out: *mut f64,
) -> RomcexStatus {
    let run = || -> Result<(), RomcexStatus> {
        if ensemble.is_null() {
            return Err(null_error("ensemble"));
        }
        if out.is_null() {
            return Err(null_error("out"));
        }
        let ens = &(*ensemble).inner;
        let map = cex_polynomial(ens, degree).map_err(|e| status_of(&e))?;
        let loss = sampled_loss(ens, &map).map_err(|e| status_of(&e))?;
        *out = loss;
        Ok(())
    };
    match guard(run) {
        Ok(()) => RomcexStatus::RomcexOk,
        Err(s) => s,
    }
}

/// Frees an ensemble handle. Null is ignored.
///
/// # Safety
/// `ensemble` must be null or an unfreed handle from
/// [`romcex_ensemble_create`]; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn romcex_ensemble_free(ensemble: *mut RomcexEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

// ── tests ───────────────────────────────────────────────────────────
