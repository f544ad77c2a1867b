use std::ffi::{CStr, CString};
use std::ptr;

use adiadio_ffi::*;

fn parse(text: &str) -> *mut AdiadioPolynomial {
    let c = CString::new(text).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { adiadio_polynomial_parse(c.as_ptr(), &mut handle) }, AdiadioStatus::Ok);
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    let p = adiadio_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

unsafe fn take_string(p: *mut std::ffi::c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    adiadio_string_free(p);
    s
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(adiadio_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn parse_evaluate_and_free() {
    let p = parse("(x+1)^3 + (y+1)^3 - (z+1)^3");
    unsafe {
        let mut k = 0usize;
        assert_eq!(adiadio_polynomial_num_vars(p, &mut k), AdiadioStatus::Ok);
        assert_eq!(k, 3);
        let mut out = ptr::null_mut();
        assert_eq!(adiadio_polynomial_evaluate(p, [0u64, 0, 1].as_ptr(), 3, &mut out), AdiadioStatus::Ok);
        assert_eq!(take_string(out), "-6");
        assert_eq!(adiadio_polynomial_canonical(p, &mut out), AdiadioStatus::Ok);
        assert!(take_string(out).contains("z^3"));
        assert!(adiadio_last_error_message().is_null());
        adiadio_polynomial_free(p);
    }
}

#[test]
fn errors_set_status_and_message() {
    let text = CString::new("x +").unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { adiadio_polynomial_parse(text.as_ptr(), &mut handle) }, AdiadioStatus::Parse);
    assert!(handle.is_null());
    assert!(last_error().contains("column 4"));

    assert_eq!(unsafe { adiadio_polynomial_parse(ptr::null(), &mut handle) }, AdiadioStatus::NullPointer);
    let bad = [0x66u8, 0xff, 0];
    assert_eq!(unsafe { adiadio_polynomial_parse(bad.as_ptr().cast(), &mut handle) }, AdiadioStatus::InvalidUtf8);

    let p = parse("x*y - 6");
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(adiadio_polynomial_evaluate(p, [1u64].as_ptr(), 1, &mut out), AdiadioStatus::InvalidArgument);
        assert!(last_error().contains("dimension"), "{}", last_error());
        let mut n = 0usize;
        assert_eq!(adiadio_polynomial_num_vars(ptr::null(), &mut n), AdiadioStatus::NullPointer);
        adiadio_polynomial_free(p);
        adiadio_string_free(ptr::null_mut());
        adiadio_polynomial_free(ptr::null_mut());
    }
}

#[test]
fn oracle_counts_roots() {
    let p = parse("(x+1)^2 + (y+1)^2 - (z+1)^2");
    let mut n = 0usize;
    unsafe {
        assert_eq!(adiadio_oracle_count(p, [6u64, 6, 6].as_ptr(), 3, 1_000_000, &mut n), AdiadioStatus::Ok);
        assert_eq!(n, 2);
        assert_eq!(adiadio_oracle_count(p, [6u64, 6, 6].as_ptr(), 3, 10, &mut n), AdiadioStatus::InvalidArgument);
        adiadio_polynomial_free(p);
    }
}

#[test]
fn flow_levels_fill_caller_buffer() {
    let p = parse("x - 6");
    let (levels, grid) = (3usize, 11usize);
    let mut buf = vec![f64::NAN; levels * grid];
    unsafe {
        assert_eq!(adiadio_spectral_flow_levels(p, 0.5, 8, levels, grid, buf.as_mut_ptr(), buf.len() - 1), AdiadioStatus::BufferTooSmall);
        assert_eq!(adiadio_spectral_flow_levels(p, 0.5, 8, levels, grid, buf.as_mut_ptr(), buf.len()), AdiadioStatus::Ok);
        adiadio_polynomial_free(p);
    }
    // terminal row is the sorted diagonal (n - 6)^2 on n = 0..8
    let last = &buf[(grid - 1) * levels..];
    assert!(last[0].abs() < 1e-9 && (last[1] - 1.0).abs() < 1e-9 && (last[2] - 1.0).abs() < 1e-9, "{last:?}");
    for row in buf.chunks(levels) {
        assert!(row.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn evolution_and_decision() {
    let p = parse("x - 6");
    unsafe {
        let mut prob = 0.0;
        assert_eq!(adiadio_evolve_ground_probability(p, 0.5, 24, 160.0, &mut prob), AdiadioStatus::Ok);
        assert!(prob > 0.95, "{prob}");

        let mut params = adiadio_decide_params_default();
        assert_eq!(params.epsilon, 0.1);
        params.seed = 7;
        let mut verdict = AdiadioVerdict::Inconclusive;
        let mut report = ptr::null_mut();
        assert_eq!(adiadio_decide(p, &params, &mut verdict, &mut report), AdiadioStatus::Ok);
        assert_eq!(verdict, AdiadioVerdict::HasSolution);
        let json = take_string(report);
        assert!(json.contains("\"witness\""));

        params.epsilon = 1.5;
        assert_eq!(adiadio_decide(p, &params, &mut verdict, ptr::null_mut()), AdiadioStatus::InvalidArgument);
        adiadio_polynomial_free(p);
    }
    let q = parse("2*x - 7");
    let mut verdict = AdiadioVerdict::Inconclusive;
    unsafe {
        assert_eq!(adiadio_decide(q, ptr::null(), &mut verdict, ptr::null_mut()), AdiadioStatus::Ok);
        adiadio_polynomial_free(q);
    }
    assert_eq!(verdict, AdiadioVerdict::NoSolution);
}
