//! C interface to `labelshift`.
//!
//! Every function returns an [`LsStatus`]. After a failure,
//! [`ls_last_error`] gives a message for the calling thread. Matrices are
//! row-major `double` arrays of `n` rows and `m` columns; labels are
//! `size_t`. Output buffers are allocated by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use labelshift::harness::{run_experiment, ExperimentConfig};
use labelshift::shift_estimation::weights_from_priors;
use labelshift::{
    adapt_predictions, apply_calibration, bbsl_estimate, em_estimate, estimate_source_priors, fit_calibration,
    rlls_estimate, CalibrationFamily, CalibrationParams, EmOptions, Error, FitOptions, LabeledLogitSet, Matrix,
    PredictionMode, ProbMatrix, RllsOptions, ShiftWeights, SimplexVector, SourcePriorMode,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    SingularMatrix = 3,
    Numerical = 4,
    DegenerateRow = 5,
    UnsatisfiableShift = 6,
    Parse = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsFamily {
    None = 0,
    Ts = 1,
    Nbvs = 2,
    Bcts = 3,
    Vs = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsPredictionMode {
    Hard = 0,
    Soft = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsSourcePriorMode {
    MeanPrediction = 0,
    LabelFrequency = 1,
}

impl From<LsFamily> for CalibrationFamily {
    fn from(f: LsFamily) -> Self {
        match f {
            LsFamily::None => CalibrationFamily::None,
            LsFamily::Ts => CalibrationFamily::Ts,
            LsFamily::Nbvs => CalibrationFamily::Nbvs,
            LsFamily::Bcts => CalibrationFamily::Bcts,
            LsFamily::Vs => CalibrationFamily::Vs,
        }
    }
}

impl From<CalibrationFamily> for LsFamily {
    fn from(f: CalibrationFamily) -> Self {
        match f {
            CalibrationFamily::None => LsFamily::None,
            CalibrationFamily::Ts => LsFamily::Ts,
            CalibrationFamily::Nbvs => LsFamily::Nbvs,
            CalibrationFamily::Bcts => LsFamily::Bcts,
            CalibrationFamily::Vs => LsFamily::Vs,
        }
    }
}

impl From<LsPredictionMode> for PredictionMode {
    fn from(m: LsPredictionMode) -> Self {
        match m {
            LsPredictionMode::Hard => PredictionMode::Hard,
            LsPredictionMode::Soft => PredictionMode::Soft,
        }
    }
}

impl From<LsSourcePriorMode> for SourcePriorMode {
    fn from(m: LsSourcePriorMode) -> Self {
        match m {
            LsSourcePriorMode::MeanPrediction => SourcePriorMode::MeanPrediction,
            LsSourcePriorMode::LabelFrequency => SourcePriorMode::LabelFrequency,
        }
    }
}

/// Opaque calibration transform. Create with [`ls_calibration_fit`],
/// [`ls_calibration_new`] or [`ls_calibration_from_json`]; release with
/// [`ls_calibration_free`].
pub struct LsCalibration {
    params: CalibrationParams,
    /// Validation NLL when the transform was fitted.
    nll: Option<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
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

type FfiResult<T> = Result<T, Failure>;

fn status_of(e: &Error) -> LsStatus {
    match e {
        Error::InvalidArgument(_) | Error::DegenerateSample => LsStatus::InvalidArgument,
        Error::SingularMatrix { .. } => LsStatus::SingularMatrix,
        Error::Numerical { .. } => LsStatus::Numerical,
        Error::DegenerateRow { .. } => LsStatus::DegenerateRow,
        Error::UnsatisfiableShift { .. } => LsStatus::UnsatisfiableShift,
        Error::Parse { .. } | Error::Validation { .. } | Error::Json(_) => LsStatus::Parse,
        Error::Io { .. } => LsStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> LsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LsStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            set_last_error(format!("null pointer passed for {name}"));
            LsStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_default();
            set_last_error(format!("internal panic: {detail}"));
            LsStatus::Panic
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Lib(Error::InvalidArgument(msg.into()))
}

unsafe fn input<'a, T>(p: *const T, len: usize, name: &'static str) -> FfiResult<&'a [T]> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, name: &'static str) -> FfiResult<&'a mut [T]> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn write<T>(p: *mut T, value: T, name: &'static str) -> FfiResult<()> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    p.write(value);
    Ok(())
}

fn size(n: usize, m: usize) -> FfiResult<usize> {
    if n == 0 || m == 0 {
        return Err(invalid("matrix dimensions must be positive"));
    }
    n.checked_mul(m).ok_or_else(|| invalid("matrix dimensions overflow"))
}

unsafe fn matrix(p: *const f64, n: usize, m: usize, name: &'static str) -> FfiResult<Matrix> {
    let data = input(p, size(n, m)?, name)?;
    Ok(Matrix::new(n, m, data.to_vec())?)
}

unsafe fn probs(p: *const f64, n: usize, m: usize, name: &'static str) -> FfiResult<ProbMatrix> {
    Ok(ProbMatrix::new(matrix(p, n, m, name)?)?)
}

unsafe fn c_str<'a>(p: *const c_char, name: &'static str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

fn into_c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| invalid("string contains a nul byte"))
}

fn copy_into(dst: &mut [f64], src: &[f64]) {
    dst.copy_from_slice(src);
}

/// Static description of a status code. Never null.
#[no_mangle]
pub extern "C" fn ls_status_message(status: LsStatus) -> *const c_char {
    let s: &'static CStr = match status {
        LsStatus::Ok => c"ok",
        LsStatus::InvalidArgument => c"invalid argument",
        LsStatus::NullPointer => c"null pointer",
        LsStatus::SingularMatrix => c"singular confusion matrix",
        LsStatus::Numerical => c"numerical failure",
        LsStatus::DegenerateRow => c"degenerate row after adaptation",
        LsStatus::UnsatisfiableShift => c"unsatisfiable shift",
        LsStatus::Parse => c"parse or validation error",
        LsStatus::Io => c"I/O error",
        LsStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Message for the last failure on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ls_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version string. Never null.
#[no_mangle]
pub extern "C" fn ls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ls_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Fits `family` on `n` labelled rows of `m` logits. A non-positive
/// `grad_tol` or zero `max_iter` selects the default.
///
/// # Safety
/// `logits` must hold `n * m` values and `labels` `n` values.
#[no_mangle]
pub unsafe extern "C" fn ls_calibration_fit(
    family: LsFamily,
    logits: *const f64,
    labels: *const usize,
    n: usize,
    m: usize,
    grad_tol: f64,
    max_iter: usize,
    out: *mut *mut LsCalibration,
) -> LsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let z = matrix(logits, n, m, "logits")?;
        let y = input(labels, n, "labels")?.to_vec();
        let set = LabeledLogitSet::new(z, y)?;
        let mut opts = FitOptions::default();
        if grad_tol > 0.0 {
            opts.grad_tol = grad_tol;
        }
        if max_iter > 0 {
            opts.max_iter = max_iter;
        }
        let fit = fit_calibration(family.into(), &set, &opts)?;
        let handle = Box::new(LsCalibration {
            params: fit.params,
            nll: Some(fit.nll),
        });
        out.write(Box::into_raw(handle));
        Ok(())
    })
}

/// Builds a transform from explicit parameters. `temperature` is read for
/// TS and BCTS, `scales` (length `m`) for NBVS and VS, `biases` (length
/// `m`) for BCTS and VS; unused pointers may be null.
///
/// # Safety
/// Non-null `scales` and `biases` must hold `m` values.
#[no_mangle]
pub unsafe extern "C" fn ls_calibration_new(
    family: LsFamily,
    temperature: f64,
    scales: *const f64,
    biases: *const f64,
    m: usize,
    out: *mut *mut LsCalibration,
) -> LsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let params = match CalibrationFamily::from(family) {
            CalibrationFamily::None => CalibrationParams::none(),
            CalibrationFamily::Ts => CalibrationParams::temperature_scaling(temperature),
            CalibrationFamily::Nbvs => CalibrationParams::nbvs(input(scales, m, "scales")?.to_vec()),
            CalibrationFamily::Bcts => CalibrationParams::bcts(temperature, input(biases, m, "biases")?.to_vec()),
            CalibrationFamily::Vs => CalibrationParams::vector_scaling(
                input(scales, m, "scales")?.to_vec(),
                input(biases, m, "biases")?.to_vec(),
            ),
        };
        params.validate(m)?;
        out.write(Box::into_raw(Box::new(LsCalibration { params, nll: None })));
        Ok(())
    })
}

/// Parses parameters in the JSON form written by `ls_calibration_to_json`.
///
/// # Safety
/// `json` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ls_calibration_from_json(json: *const c_char, out: *mut *mut LsCalibration) -> LsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let params = CalibrationParams::from_json(c_str(json, "json")?)?;
        out.write(Box::into_raw(Box::new(LsCalibration { params, nll: None })));
        Ok(())
    })
}

/// JSON form of the parameters. Free the result with [`ls_string_free`].
///
/// # Safety
/// `handle` must be a live calibration handle.
#[no_mangle]
pub unsafe extern "C" fn ls_calibration_to_json(handle: *const LsCalibration, out: *mut *mut c_char) -> LsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        let s = into_c_string(h.params.to_json()?)?;
        write(out, s, "out")
    })
}

/// # Safety
/// `handle` must be a live calibration handle.
#[no_mangle]
pub unsafe extern "C" fn ls_calibration_family(handle: *const LsCalibration, out: *mut LsFamily) -> LsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        write(out, h.params.family.into(), "out")
    })
}

/// Validation NLL reached by the fit; NaN for handles that were not fitted.
///
/// # Safety
/// `handle` must be a live calibration handle.
#[no_mangle]
pub unsafe extern "C" fn ls_calibration_nll(handle: *const LsCalibration, out: *mut f64) -> LsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        write(out, h.nll.unwrap_or(f64::NAN), "out")
    })
}

/// Calibrated probabilities for `n` rows of `m` logits, written to
/// `out_probs` (`n * m` values).
///
/// # Safety
/// `handle` must be live; `logits` and `out_probs` must hold `n * m` values.
#[no_mangle]
pub unsafe extern "C" fn ls_calibration_apply(
    handle: *const LsCalibration,
    logits: *const f64,
    n: usize,
    m: usize,
    out_probs: *mut f64,
) -> LsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or(Failure::Null("handle"))?;
        let p = apply_calibration(&h.params, &matrix(logits, n, m, "logits")?)?;
        copy_into(output(out_probs, n * m, "out_probs")?, p.matrix().as_slice());
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `handle` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ls_calibration_free(handle: *mut LsCalibration) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Source priors from validation probabilities. `labels` is only read
/// (and then required) in label-frequency mode.
///
/// # Safety
/// `valid_probs` must hold `n * m` values, non-null `labels` `n` values
/// and `out_priors` room for `m`.
#[no_mangle]
pub unsafe extern "C" fn ls_source_priors(
    mode: LsSourcePriorMode,
    valid_probs: *const f64,
    labels: *const usize,
    n: usize,
    m: usize,
    out_priors: *mut f64,
) -> LsStatus {
    guard(|| {
        let p = probs(valid_probs, n, m, "valid_probs")?;
        let y = match mode {
            LsSourcePriorMode::LabelFrequency => Some(input(labels, n, "labels")?),
            LsSourcePriorMode::MeanPrediction => None,
        };
        let priors = estimate_source_priors(&p, mode.into(), y)?;
        copy_into(output(out_priors, m, "out_priors")?, priors.as_slice());
        Ok(())
    })
}

/// EM estimate of the target priors and weights. A non-positive `tol` or
/// zero `max_iter` selects the default. `out_iterations` and
/// `out_converged` may be null.
///
/// # Safety
/// `target_probs` must hold `n * m` values; `source_priors`, `out_priors`
/// and `out_weights` `m` values each.
#[no_mangle]
pub unsafe extern "C" fn ls_em_estimate(
    target_probs: *const f64,
    n: usize,
    m: usize,
    source_priors: *const f64,
    tol: f64,
    max_iter: usize,
    out_priors: *mut f64,
    out_weights: *mut f64,
    out_iterations: *mut usize,
    out_converged: *mut bool,
) -> LsStatus {
    guard(|| {
        let p = probs(target_probs, n, m, "target_probs")?;
        let source = SimplexVector::new(input(source_priors, m, "source_priors")?.to_vec())?;
        let mut opts = EmOptions::default();
        if tol > 0.0 {
            opts.tol = tol;
        }
        if max_iter > 0 {
            opts.max_iter = max_iter;
        }
        let r = em_estimate(&p, &source, &opts)?;
        copy_into(output(out_priors, m, "out_priors")?, r.target_priors.as_slice());
        copy_into(output(out_weights, m, "out_weights")?, r.weights.as_slice());
        if !out_iterations.is_null() {
            out_iterations.write(r.iterations);
        }
        if !out_converged.is_null() {
            out_converged.write(r.converged);
        }
        Ok(())
    })
}

/// Black-box shift weights from a validation confusion matrix.
///
/// # Safety
/// `valid_probs` must hold `n_valid * m` values, `valid_labels` `n_valid`,
/// `target_probs` `n_target * m` and `out_weights` `m`.
#[no_mangle]
pub unsafe extern "C" fn ls_bbsl_estimate(
    mode: LsPredictionMode,
    valid_probs: *const f64,
    valid_labels: *const usize,
    n_valid: usize,
    target_probs: *const f64,
    n_target: usize,
    m: usize,
    out_weights: *mut f64,
) -> LsStatus {
    guard(|| {
        let v = probs(valid_probs, n_valid, m, "valid_probs")?;
        let y = input(valid_labels, n_valid, "valid_labels")?;
        let t = probs(target_probs, n_target, m, "target_probs")?;
        let w = bbsl_estimate(mode.into(), &v, y, &t)?;
        copy_into(output(out_weights, m, "out_weights")?, w.as_slice());
        Ok(())
    })
}

/// Regularized shift weights; arguments as [`ls_bbsl_estimate`] plus the
/// penalty `lambda >= 0` and step `delta` in `[0, 1]`.
///
/// # Safety
/// As [`ls_bbsl_estimate`].
#[no_mangle]
pub unsafe extern "C" fn ls_rlls_estimate(
    mode: LsPredictionMode,
    valid_probs: *const f64,
    valid_labels: *const usize,
    n_valid: usize,
    target_probs: *const f64,
    n_target: usize,
    m: usize,
    lambda: f64,
    delta: f64,
    out_weights: *mut f64,
) -> LsStatus {
    guard(|| {
        let v = probs(valid_probs, n_valid, m, "valid_probs")?;
        let y = input(valid_labels, n_valid, "valid_labels")?;
        let t = probs(target_probs, n_target, m, "target_probs")?;
        let opts = RllsOptions {
            lambda,
            delta,
            ..RllsOptions::default()
        };
        let r = rlls_estimate(mode.into(), &v, y, &t, &opts)?;
        copy_into(output(out_weights, m, "out_weights")?, r.weights.as_slice());
        Ok(())
    })
}

/// Weights `q_i / p_i` from target and source priors.
///
/// # Safety
/// `target_priors`, `source_priors` and `out_weights` must hold `m` values.
#[no_mangle]
pub unsafe extern "C" fn ls_weights_from_priors(
    target_priors: *const f64,
    source_priors: *const f64,
    m: usize,
    out_weights: *mut f64,
) -> LsStatus {
    guard(|| {
        let q = SimplexVector::new(input(target_priors, m, "target_priors")?.to_vec())?;
        let p = SimplexVector::new(input(source_priors, m, "source_priors")?.to_vec())?;
        let w = weights_from_priors(&q, &p)?;
        copy_into(output(out_weights, m, "out_weights")?, w.as_slice());
        Ok(())
    })
}

/// Reweights each probability row by `weights` and renormalizes.
///
/// # Safety
/// `probabilities` and `out_probs` must hold `n * m` values, `weights` `m`.
#[no_mangle]
pub unsafe extern "C" fn ls_adapt_predictions(
    probabilities: *const f64,
    n: usize,
    m: usize,
    weights: *const f64,
    out_probs: *mut f64,
) -> LsStatus {
    guard(|| {
        let p = probs(probabilities, n, m, "probabilities")?;
        let w = ShiftWeights::new(input(weights, m, "weights")?.to_vec())?;
        let adapted = adapt_predictions(&p, &w)?;
        copy_into(output(out_probs, n * m, "out_probs")?, adapted.matrix().as_slice());
        Ok(())
    })
}

/// Runs an experiment from a JSON configuration and returns the records
/// and summary as JSON. Relative dataset paths resolve against the working
/// directory. Free the result with [`ls_string_free`].
///
/// # Safety
/// `config_json` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ls_run_experiment(config_json: *const c_char, out_json: *mut *mut c_char) -> LsStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(Failure::Null("out_json"));
        }
        let config = ExperimentConfig::from_json(c_str(config_json, "config_json")?)?;
        let result = run_experiment(config)?;
        let text = serde_json::to_string(&result).map_err(Error::from)?;
        out_json.write(into_c_string(text)?);
        Ok(())
    })
}
