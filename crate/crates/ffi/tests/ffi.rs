use std::ffi::{c_char, CStr, CString};
use std::ptr;

use moser_transport_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        mt_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn builtin(name: &str, params: Option<&str>) -> *mut MtFamily {
    let name = CString::new(name).unwrap();
    let params = params.map(|p| CString::new(p).unwrap());
    let mut fam = ptr::null_mut();
    let st = unsafe {
        mt_family_builtin(
            name.as_ptr(),
            params.as_ref().map_or(ptr::null(), |p| p.as_ptr()),
            &mut fam,
        )
    };
    assert_eq!(st, MtStatus::MtOk, "{}", last_error());
    fam
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(mt_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn affine_family_evaluates() {
    let fam = builtin("affine", Some("c=0.5"));
    let mut out = 0.0;
    assert_eq!(
        unsafe { mt_family_eval(fam, 0.5, 0.0, 1.0, &mut out) },
        MtStatus::MtOk
    );
    assert!((out - 1.5).abs() < 1e-15);
    assert_eq!(
        unsafe { mt_family_eval(fam, 0.9, 0.0, 0.5, &mut out) },
        MtStatus::MtOutOfDomain
    );
    assert!(last_error().contains("0.9"), "{}", last_error());
    unsafe { mt_family_free(fam) };
}

#[test]
fn errors_are_reported() {
    let mut fam = ptr::null_mut();
    let bad = CString::new("1 + (x").unwrap();
    let st = unsafe {
        mt_family_expression(
            MtDomainKind::MtInterval,
            1.0,
            bad.as_ptr(),
            0.0,
            1.0,
            2,
            &mut fam,
        )
    };
    assert_eq!(st, MtStatus::MtParseError);
    assert!(fam.is_null());
    let name = CString::new("no_such_family").unwrap();
    let st = unsafe { mt_family_builtin(name.as_ptr(), ptr::null(), &mut fam) };
    assert_ne!(st, MtStatus::MtOk);
    assert!(!last_error().is_empty());
    let st = unsafe { mt_family_builtin(ptr::null(), ptr::null(), &mut fam) };
    assert_eq!(st, MtStatus::MtNullPointer);
    // Truncation reports the full length.
    let mut small = [0 as c_char; 4];
    let n = unsafe { mt_last_error(small.as_mut_ptr(), small.len()) };
    assert!(n > 3);
    assert_eq!(small[3], 0);
}

#[test]
fn constant_family_gives_identity() {
    let fam = builtin("constant", None);
    let mut rep = ptr::null_mut();
    assert_eq!(
        unsafe { mt_representation_build(fam, ptr::null(), &mut rep) },
        MtStatus::MtOk,
        "{}",
        last_error()
    );
    let ts: Vec<f64> = (0..=32).map(|i| i as f64 / 32.0).collect();
    let mut out = vec![0.0; ts.len()];
    let st = unsafe {
        mt_representation_eval(
            rep,
            0.3,
            ptr::null(),
            ts.as_ptr(),
            ts.len(),
            ptr::null_mut(),
            out.as_mut_ptr(),
        )
    };
    assert_eq!(st, MtStatus::MtOk, "{}", last_error());
    for (t, o) in ts.iter().zip(&out) {
        assert!((t - o).abs() <= 1e-12);
    }
    let (mut l1, mut pass) = (1.0, false);
    assert_eq!(
        unsafe { mt_representation_verify(rep, &mut l1, &mut pass) },
        MtStatus::MtOk
    );
    assert!(pass && l1 <= 1e-12);
    unsafe {
        mt_representation_free(rep);
        mt_family_free(fam);
    }
}

#[test]
fn affine_representation_matches_quadratic_root() {
    let fam = builtin("affine", None);
    let mut opts = MtPipelineOptions {
        mode: 0,
        side: 0,
        v: 0.0,
        nt: 0,
        na: 0,
        steps: 0,
        tol_push: 0.0,
    };
    unsafe { mt_pipeline_defaults(&mut opts) };
    opts.v = 0.5;
    let mut rep = ptr::null_mut();
    assert_eq!(
        unsafe { mt_representation_build(fam, &opts, &mut rep) },
        MtStatus::MtInvalidArgument
    );
    opts.v = 0.25;
    assert_eq!(
        unsafe { mt_representation_build(fam, &opts, &mut rep) },
        MtStatus::MtOk,
        "{}",
        last_error()
    );
    let t = [0.5];
    let mut out = [0.0];
    unsafe {
        mt_representation_eval(
            rep,
            0.5,
            ptr::null(),
            t.as_ptr(),
            1,
            ptr::null_mut(),
            out.as_mut_ptr(),
        )
    };
    assert!(
        (out[0] - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-4,
        "{}",
        out[0]
    );
    unsafe {
        mt_representation_free(rep);
        mt_family_free(fam);
    }
}

#[test]
fn quantiles_and_w_infinity() {
    let fam = builtin("affine", None);
    let (mut q0, mut q1) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(mt_quantile_build(fam, 0.0, 4096, &mut q0), MtStatus::MtOk);
        assert_eq!(mt_quantile_build(fam, 0.5, 4096, &mut q1), MtStatus::MtOk);
        let mut y = 0.0;
        mt_quantile_inverse(q0, 0.25, &mut y);
        assert!((y - 0.25).abs() < 1e-9);
        // F(m) = m/2 + m²/2 at x = 1/2.
        mt_quantile_cdf(q1, 0.5, &mut y);
        assert!((y - 0.375).abs() < 1e-6, "{y}");
        assert_eq!(
            mt_quantile_inverse(q1, 1.5, &mut y),
            MtStatus::MtOutOfDomain
        );
        let mut w = 0.0;
        assert_eq!(mt_w_infinity(q0, q1, &mut w), MtStatus::MtOk);
        // sup_p |p − (√(1+8p) − 1)/2| is reached at p = 3/8.
        assert!((w - 0.125).abs() < 1e-4, "{w}");
        mt_quantile_free(q0);
        mt_quantile_free(q1);
        mt_family_free(fam);
        mt_family_free(ptr::null_mut());
    }
}
