//! C interface to the adiadio library.
//!
//! Every fallible call returns an [`AdiadioStatus`]; on failure the message
//! is available from [`adiadio_last_error_message`] on the calling thread.
//! Strings handed out by the library are released with
//! [`adiadio_string_free`], polynomial handles with
//! [`adiadio_polynomial_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use adiadio::decide::{run_decision, DecideError, DecisionConfig, Verdict};
use adiadio::evolve::{coherent_initial_state, evolve, probabilities, EvolveError, EvolveOptions, DEFAULT_TAIL_TOL};
use adiadio::fock::FockBasis;
use adiadio::ops::{build_hi, build_hp, CoherentParams, Ramp, Schedule};
use adiadio::poly::{parse_equation, ParseOptions, Polynomial};
use adiadio::spectral::{spectral_flow, FlowOptions};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdiadioStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidArgument = 4,
    Numerical = 5,
    NormDrift = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Outcome of a decision run; values match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdiadioVerdict {
    HasSolution = 0,
    NoSolution = 1,
    Inconclusive = 4,
}

impl From<Verdict> for AdiadioVerdict {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::HasSolution => AdiadioVerdict::HasSolution,
            Verdict::NoSolutionWithinConfidence => AdiadioVerdict::NoSolution,
            Verdict::Inconclusive => AdiadioVerdict::Inconclusive,
        }
    }
}

/// Decision settings. Zero in `reference_cutoff` or `max_model_cutoff`
/// selects the library default.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AdiadioDecideParams {
    pub epsilon: f64,
    pub confidence: f64,
    pub seed: u64,
    pub initial_t: f64,
    pub max_t: f64,
    pub reference_cutoff: u32,
    pub max_model_cutoff: u32,
}

/// Parsed polynomial; opaque to C.
pub struct AdiadioPolynomial {
    inner: Polynomial,
}

struct FfiError {
    status: AdiadioStatus,
    message: String,
}

impl FfiError {
    fn new(status: AdiadioStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl From<EvolveError> for FfiError {
    fn from(e: EvolveError) -> Self {
        match e {
            EvolveError::NormDrift { .. } => FfiError::new(AdiadioStatus::NormDrift, e.to_string()),
            EvolveError::TailMass { .. } => FfiError::new(AdiadioStatus::InvalidArgument, e.to_string()),
            other => FfiError::new(AdiadioStatus::Numerical, other.to_string()),
        }
    }
}

impl From<DecideError> for FfiError {
    fn from(e: DecideError) -> Self {
        match e {
            DecideError::Evolve(inner) => inner.into(),
            DecideError::Config(msg) => FfiError::new(AdiadioStatus::InvalidArgument, msg),
            other => FfiError::new(AdiadioStatus::Numerical, other.to_string()),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), FfiError>>(f: F) -> AdiadioStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdiadioStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(&e.message);
            e.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal panic".to_string());
            set_last_error(&msg);
            AdiadioStatus::Panic
        }
    }
}

fn null(what: &str) -> FfiError {
    FfiError::new(AdiadioStatus::NullPointer, format!("{what} is null"))
}

fn invalid(e: impl std::fmt::Display) -> FfiError {
    FfiError::new(AdiadioStatus::InvalidArgument, e.to_string())
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, FfiError> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| FfiError::new(AdiadioStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn read_poly<'a>(p: *const AdiadioPolynomial) -> Result<&'a Polynomial, FfiError> {
    p.as_ref().map(|h| &h.inner).ok_or_else(|| null("polynomial"))
}

unsafe fn read_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], FfiError> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), FfiError> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior nul removed").into_raw()
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn adiadio_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn adiadio_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn adiadio_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses an equation such as `"(x+1)^2 + (y+1)^2 - (z+1)^2"`.
///
/// # Safety
/// `text` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn adiadio_polynomial_parse(text: *const c_char, out: *mut *mut AdiadioPolynomial) -> AdiadioStatus {
    guard(|| {
        let text = read_str(text, "equation text")?;
        if out.is_null() {
            return Err(null("output handle"));
        }
        let inner = parse_equation(text, &ParseOptions::default()).map_err(|e| FfiError::new(AdiadioStatus::Parse, e.to_string()))?;
        out.write(Box::into_raw(Box::new(AdiadioPolynomial { inner })));
        Ok(())
    })
}

/// Releases a polynomial handle. Null is ignored.
///
/// # Safety
/// `p` must come from [`adiadio_polynomial_parse`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn adiadio_polynomial_free(p: *mut AdiadioPolynomial) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adiadio_polynomial_num_vars(p: *const AdiadioPolynomial, out: *mut usize) -> AdiadioStatus {
    guard(|| write_out(out, read_poly(p)?.num_vars(), "output"))
}

/// Canonical expanded form; free the result with [`adiadio_string_free`].
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adiadio_polynomial_canonical(p: *const AdiadioPolynomial, out: *mut *mut c_char) -> AdiadioStatus {
    guard(|| {
        let poly = read_poly(p)?;
        write_out(out, to_c_string(poly.to_canonical_string()), "output")
    })
}

/// Exact value at a non-negative point, as a decimal string freed with
/// [`adiadio_string_free`].
///
/// # Safety
/// `point` must hold `len` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn adiadio_polynomial_evaluate(
    p: *const AdiadioPolynomial,
    point: *const u64,
    len: usize,
    out: *mut *mut c_char,
) -> AdiadioStatus {
    guard(|| {
        let poly = read_poly(p)?;
        let point = read_slice(point, len, "point")?;
        let value = poly.evaluate(point).map_err(invalid)?;
        write_out(out, to_c_string(value.to_string()), "output")
    })
}

/// Number of roots with `0 <= x_i <= bounds[i]`.
///
/// # Safety
/// `bounds` must hold `len` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn adiadio_oracle_count(
    p: *const AdiadioPolynomial,
    bounds: *const u64,
    len: usize,
    volume_cap: u64,
    out: *mut usize,
) -> AdiadioStatus {
    guard(|| {
        let poly = read_poly(p)?;
        let bounds = read_slice(bounds, len, "bounds")?;
        let roots = poly.brute_force_search(bounds, volume_cap as u128).map_err(invalid)?;
        write_out(out, roots.len(), "output")
    })
}

fn operators(poly: &Polynomial, alpha: f64, cutoff: u32) -> Result<(Arc<FockBasis>, CoherentParams, adiadio::ops::OperatorMatrix, adiadio::ops::ProblemHamiltonian), FfiError> {
    if poly.is_constant() {
        return Err(invalid("constant equation has no modes to simulate"));
    }
    let basis = FockBasis::enumerate(poly.num_vars(), cutoff).map_err(invalid)?;
    let coherent = CoherentParams::uniform(poly.num_vars(), alpha).map_err(invalid)?;
    let hp = build_hp(poly, &basis).map_err(invalid)?;
    let hi = build_hi(&coherent, &basis).map_err(invalid)?;
    Ok((Arc::new(basis), coherent, hi, hp))
}

/// Sorted lowest `levels` eigenvalues at `grid` equally spaced values of `s`,
/// written row by row (`out[k * levels + q]`) into `out`.
///
/// # Safety
/// `out` must have room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn adiadio_spectral_flow_levels(
    p: *const AdiadioPolynomial,
    alpha: f64,
    cutoff: u32,
    levels: usize,
    grid: usize,
    out: *mut f64,
    out_len: usize,
) -> AdiadioStatus {
    guard(|| {
        let poly = read_poly(p)?;
        let needed = levels.checked_mul(grid).ok_or_else(|| invalid("levels * grid overflows"))?;
        if out_len < needed {
            return Err(FfiError::new(AdiadioStatus::BufferTooSmall, format!("need {needed} values, buffer holds {out_len}")));
        }
        if out.is_null() {
            return Err(null("output buffer"));
        }
        let (_, _, hi, hp) = operators(poly, alpha, cutoff)?;
        let sched = Schedule::uniform(1.0, Ramp::Linear, grid).map_err(invalid)?;
        let opts = FlowOptions { num_levels: levels, keep_vectors: false, ..Default::default() };
        let flow = spectral_flow(&hi, hp.matrix(), &sched, &opts).map_err(|e| FfiError::new(AdiadioStatus::Numerical, e.to_string()))?;
        let dst = std::slice::from_raw_parts_mut(out, needed);
        for (k, row) in flow.levels.iter().enumerate() {
            dst[k * levels..(k + 1) * levels].copy_from_slice(&row[..levels]);
        }
        Ok(())
    })
}

/// Probability of ending in a minimizer of `H_P` after a linear-ramp run of
/// total time `total_time` from the coherent state.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adiadio_evolve_ground_probability(
    p: *const AdiadioPolynomial,
    alpha: f64,
    cutoff: u32,
    total_time: f64,
    out: *mut f64,
) -> AdiadioStatus {
    guard(|| {
        let poly = read_poly(p)?;
        let (basis, coherent, hi, hp) = operators(poly, alpha, cutoff)?;
        let sched = Schedule::uniform(total_time, Ramp::Linear, 2).map_err(invalid)?;
        let psi0 = coherent_initial_state(&coherent, basis, DEFAULT_TAIL_TOL)?;
        let (psi, _) = evolve(&hi, hp.matrix(), &sched, &psi0, &EvolveOptions::default())?;
        let probs = probabilities(&psi);
        let ground: f64 = hp.minimizers().iter().map(|&i| probs.probs()[i]).sum();
        write_out(out, ground, "output")
    })
}

/// Library defaults for [`adiadio_decide`].
#[no_mangle]
pub extern "C" fn adiadio_decide_params_default() -> AdiadioDecideParams {
    let d = DecisionConfig::default();
    AdiadioDecideParams {
        epsilon: d.epsilon,
        confidence: d.confidence,
        seed: d.seed,
        initial_t: d.initial_t,
        max_t: d.max_t,
        reference_cutoff: 0,
        max_model_cutoff: 0,
    }
}

/// Runs the decision loop. When `report_json` is not null it receives the
/// full report, freed with [`adiadio_string_free`].
///
/// # Safety
/// `params` may be null (defaults); `verdict` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adiadio_decide(
    p: *const AdiadioPolynomial,
    params: *const AdiadioDecideParams,
    verdict: *mut AdiadioVerdict,
    report_json: *mut *mut c_char,
) -> AdiadioStatus {
    guard(|| {
        let poly = read_poly(p)?;
        if verdict.is_null() {
            return Err(null("verdict"));
        }
        let params = params.as_ref().copied().unwrap_or_else(|| adiadio_decide_params_default());
        let cfg = DecisionConfig {
            epsilon: params.epsilon,
            confidence: params.confidence,
            seed: params.seed,
            initial_t: params.initial_t,
            max_t: params.max_t,
            reference_cutoff: (params.reference_cutoff > 0).then_some(params.reference_cutoff),
            max_model_cutoff: (params.max_model_cutoff > 0).then_some(params.max_model_cutoff),
            ..DecisionConfig::default()
        };
        let report = run_decision(poly, &cfg)?;
        if !report_json.is_null() {
            let mut buf = Vec::new();
            report.write_json(&mut buf).map_err(|e| FfiError::new(AdiadioStatus::Numerical, e.to_string()))?;
            report_json.write(to_c_string(String::from_utf8(buf).expect("JSON is UTF-8")));
        }
        verdict.write(report.verdict.into());
        Ok(())
    })
}
