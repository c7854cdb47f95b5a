//! C ABI for `moser-transport`.
//!
//! Every handle is opaque and owned by the caller once returned; release it
//! with the matching `*_free`. Functions return an [`MtStatus`]; on failure
//! the message is available from [`mt_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;

use moser_transport::density::{builtin_family, parse_param_list, DensityFamily, ParamRange};
use moser_transport::diagnostics::{w_infinity_1d, QuantileFunction};
use moser_transport::geometry::{make_domain, BoundarySide, DomainKind, DomainSpec, Point};
use moser_transport::transport::{Mode, PipelineOptions, TransportFamily, TransportMap};
use moser_transport::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtStatus {
    MtOk = 0,
    MtNullPointer = 1,
    MtInvalidArgument = 2,
    MtParseError = 3,
    MtOutOfDomain = 4,
    MtConstructionFailed = 5,
    MtPanic = 6,
}

/// Domain of a family built from an expression.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtDomainKind {
    MtInterval = 0,
    MtCylinder = 1,
    MtTorus = 2,
}

/// Construction options; fill with [`mt_pipeline_defaults`] first.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MtPipelineOptions {
    /// 0 auto, 1 collar then Moser, 2 Moser only.
    pub mode: u32,
    /// 0 lower boundary, 1 upper boundary.
    pub side: u32,
    pub v: f64,
    pub nt: u32,
    pub na: u32,
    pub steps: u32,
    pub tol_push: f64,
}

/// A parametrised density family `x ↦ ρ_x`.
pub struct MtFamily {
    inner: DensityFamily,
}

/// A family of transport maps `T_x` with the map at the last parameter
/// cached.
pub struct MtRepresentation {
    inner: TransportFamily,
    last: Mutex<Option<TransportMap>>,
}

/// Quantile function of one member `ρ_x` on the interval.
pub struct MtQuantile {
    inner: QuantileFunction,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> MtStatus {
    match err {
        Error::Syntax { .. } | Error::UnknownIdentifier { .. } | Error::Arity { .. } => {
            MtStatus::MtParseError
        }
        Error::Config(_) | Error::ConfigSyntax { .. } => MtStatus::MtParseError,
        Error::OutOfDomain(_) | Error::EvalDomain(_) => MtStatus::MtOutOfDomain,
        Error::InvalidParam(_) => MtStatus::MtInvalidArgument,
        _ => MtStatus::MtConstructionFailed,
    }
}

/// Runs `f`, turning errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (MtStatus, String)>) -> MtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MtStatus::MtOk,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MtStatus::MtPanic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, (MtStatus, String)>;
}

impl<T> OrStatus<T> for moser_transport::Result<T> {
    fn or_status(self) -> Result<T, (MtStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (MtStatus, String) {
    (MtStatus::MtNullPointer, format!("`{what}` is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MtStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        (
            MtStatus::MtInvalidArgument,
            format!("`{what}` is not UTF-8"),
        )
    })
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length in
/// bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mt_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builtin family by name; `params` is `key=value` pairs separated by
/// commas, or null.
///
/// # Safety
/// `name` and `params` must be null or NUL-terminated strings; `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mt_family_builtin(
    name: *const c_char,
    params: *const c_char,
    out: *mut *mut MtFamily,
) -> MtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = read_str(name, "name")?;
        let params = if params.is_null() {
            Default::default()
        } else {
            parse_param_list(read_str(params, "params")?).or_status()?
        };
        let inner = builtin_family(name, &params).or_status()?;
        *out = Box::into_raw(Box::new(MtFamily { inner }));
        Ok(())
    })
}

/// Family from a density expression in `x`, `a`, `t` (or `m`) on the given
/// domain, with parameters in `[x_min, x_max]` and derivative order `k`.
///
/// # Safety
/// `expr` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mt_family_expression(
    domain: MtDomainKind,
    circumference: f64,
    expr: *const c_char,
    x_min: f64,
    x_max: f64,
    k: u32,
    out: *mut *mut MtFamily,
) -> MtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(expr, "expr")?;
        let kind = match domain {
            MtDomainKind::MtInterval => DomainKind::Interval,
            MtDomainKind::MtCylinder => DomainKind::Cylinder,
            MtDomainKind::MtTorus => DomainKind::Torus,
        };
        let d = make_domain(&DomainSpec {
            kind,
            circumference: (kind == DomainKind::Cylinder).then_some(circumference),
        })
        .or_status()?;
        let range = ParamRange::new(x_min, x_max).or_status()?;
        let inner = DensityFamily::parse(d, text, range, k as usize).or_status()?;
        *out = Box::into_raw(Box::new(MtFamily { inner }));
        Ok(())
    })
}

/// `ρ(x, (a, t))`; on the interval `a` is ignored.
///
/// # Safety
/// `fam` must come from this library; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mt_family_eval(
    fam: *const MtFamily,
    x: f64,
    a: f64,
    t: f64,
    out: *mut f64,
) -> MtStatus {
    guard(|| {
        let fam = fam.as_ref().ok_or_else(|| null("fam"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = fam.inner.eval(x, Point::new(a, t)).or_status()?;
        Ok(())
    })
}

/// # Safety
/// `fam` must be null or come from this library, and not be used after.
#[no_mangle]
pub unsafe extern "C" fn mt_family_free(fam: *mut MtFamily) {
    if !fam.is_null() {
        drop(Box::from_raw(fam));
    }
}

/// Writes the default construction options.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mt_pipeline_defaults(out: *mut MtPipelineOptions) -> MtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let d = PipelineOptions::default();
        *out = MtPipelineOptions {
            mode: 0,
            side: 0,
            v: d.v,
            nt: d.nt as u32,
            na: d.na as u32,
            steps: d.moser.steps as u32,
            tol_push: d.tol_push,
        };
        Ok(())
    })
}

fn options_from(o: &MtPipelineOptions) -> Result<PipelineOptions, (MtStatus, String)> {
    let bad = |m: String| (MtStatus::MtInvalidArgument, m);
    let mut p = PipelineOptions {
        mode: match o.mode {
            0 => Mode::Auto,
            1 => Mode::CollarMoser,
            2 => Mode::MoserOnly,
            m => return Err(bad(format!("unknown mode {m}"))),
        },
        side: match o.side {
            0 => BoundarySide::Lower,
            1 => BoundarySide::Upper,
            s => return Err(bad(format!("unknown side {s}"))),
        },
        v: o.v,
        nt: o.nt as usize,
        na: o.na as usize,
        tol_push: o.tol_push,
        ..PipelineOptions::default()
    };
    p.moser.steps = o.steps as usize;
    if !(p.v > 1.0 / 6.0 && p.v < 1.0 / 3.0) {
        return Err(bad(format!("v = {} must lie in (1/6, 1/3)", p.v)));
    }
    if p.nt < 16 || p.na < 16 || p.moser.steps == 0 || !(p.tol_push > 0.0) {
        return Err(bad(
            "grids need at least 16 nodes, steps and tolerance must be positive".into(),
        ));
    }
    Ok(p)
}

/// Builds the transport family for `fam`; `opts` may be null for the
/// defaults. No pushforward verification is run.
///
/// # Safety
/// `fam` must come from this library; `opts` must be null or valid;
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mt_representation_build(
    fam: *const MtFamily,
    opts: *const MtPipelineOptions,
    out: *mut *mut MtRepresentation,
) -> MtStatus {
    guard(|| {
        let fam = fam.as_ref().ok_or_else(|| null("fam"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let opts = match opts.as_ref() {
            Some(o) => options_from(o)?,
            None => PipelineOptions::default(),
        };
        let inner = TransportFamily::new(&fam.inner, &opts).or_status()?;
        *out = Box::into_raw(Box::new(MtRepresentation {
            inner,
            last: Mutex::new(None),
        }));
        Ok(())
    })
}

/// Evaluates `T_x` at `n` points `(a[i], t[i])`, writing the images to
/// `out_a` and `out_t`. On the interval `a` may be null and `out_a` is
/// then left untouched.
///
/// # Safety
/// `rep` must come from this library; `t`, `out_t` (and `a`, `out_a` when
/// non-null) must be valid for `n` elements.
#[no_mangle]
pub unsafe extern "C" fn mt_representation_eval(
    rep: *const MtRepresentation,
    x: f64,
    a: *const f64,
    t: *const f64,
    n: usize,
    out_a: *mut f64,
    out_t: *mut f64,
) -> MtStatus {
    guard(|| {
        let rep = rep.as_ref().ok_or_else(|| null("rep"))?;
        if t.is_null() || out_t.is_null() {
            return Err(null("t"));
        }
        let ts = std::slice::from_raw_parts(t, n);
        let pts: Vec<Point> = match a.is_null() {
            true => ts.iter().map(|&t| Point::on_line(t)).collect(),
            false => std::slice::from_raw_parts(a, n)
                .iter()
                .zip(ts)
                .map(|(&a, &t)| Point::new(a, t))
                .collect(),
        };
        let mut last = rep.last.lock().unwrap_or_else(|p| p.into_inner());
        if last.as_ref().map_or(true, |m| m.x.to_bits() != x.to_bits()) {
            *last = Some(rep.inner.map_at(x).or_status()?);
        }
        let images = last
            .as_ref()
            .expect("cached map")
            .eval_many(&pts)
            .or_status()?;
        let out_t = std::slice::from_raw_parts_mut(out_t, n);
        for (o, q) in out_t.iter_mut().zip(&images) {
            *o = q.t;
        }
        if !out_a.is_null() {
            let out_a = std::slice::from_raw_parts_mut(out_a, n);
            for (o, q) in out_a.iter_mut().zip(&images) {
                *o = q.a;
            }
        }
        Ok(())
    })
}

/// Runs the pushforward checks; writes the worst L¹ error and whether every
/// check passed.
///
/// # Safety
/// `rep` must come from this library; outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mt_representation_verify(
    rep: *mut MtRepresentation,
    worst_l1: *mut f64,
    pass: *mut bool,
) -> MtStatus {
    guard(|| {
        let rep = rep.as_mut().ok_or_else(|| null("rep"))?;
        if worst_l1.is_null() || pass.is_null() {
            return Err(null("output"));
        }
        let s = rep.inner.verify().or_status()?;
        *worst_l1 = s.verifications.iter().map(|v| v.l1).fold(0.0, f64::max);
        *pass = s.pass;
        Ok(())
    })
}

/// # Safety
/// `rep` must be null or come from this library, and not be used after.
#[no_mangle]
pub unsafe extern "C" fn mt_representation_free(rep: *mut MtRepresentation) {
    if !rep.is_null() {
        drop(Box::from_raw(rep));
    }
}

/// Quantile function of `ρ_x` from `n_nodes` cells (interval families).
///
/// # Safety
/// `fam` must come from this library; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mt_quantile_build(
    fam: *const MtFamily,
    x: f64,
    n_nodes: usize,
    out: *mut *mut MtQuantile,
) -> MtStatus {
    guard(|| {
        let fam = fam.as_ref().ok_or_else(|| null("fam"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = QuantileFunction::of_family(&fam.inner, x, n_nodes).or_status()?;
        *out = Box::into_raw(Box::new(MtQuantile { inner }));
        Ok(())
    })
}

/// `F^{-1}(p)` for `p ∈ [0, 1]`.
///
/// # Safety
/// `q` must come from this library; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mt_quantile_inverse(
    q: *const MtQuantile,
    p: f64,
    out: *mut f64,
) -> MtStatus {
    guard(|| {
        let q = q.as_ref().ok_or_else(|| null("q"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err((
                MtStatus::MtOutOfDomain,
                format!("probability {p} outside [0, 1]"),
            ));
        }
        *out = q.inner.inverse(p);
        Ok(())
    })
}

/// `F(m)` for `m ∈ [0, 1]`.
///
/// # Safety
/// `q` must come from this library; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mt_quantile_cdf(q: *const MtQuantile, m: f64, out: *mut f64) -> MtStatus {
    guard(|| {
        let q = q.as_ref().ok_or_else(|| null("q"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(0.0..=1.0).contains(&m) {
            return Err((MtStatus::MtOutOfDomain, format!("point {m} outside [0, 1]")));
        }
        *out = q.inner.cdf(m);
        Ok(())
    })
}

/// # Safety
/// `q` must be null or come from this library, and not be used after.
#[no_mangle]
pub unsafe extern "C" fn mt_quantile_free(q: *mut MtQuantile) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// `W∞` distance between two measures on the interval given by their
/// quantile functions.
///
/// # Safety
/// `q1`, `q2` must come from this library; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mt_w_infinity(
    q1: *const MtQuantile,
    q2: *const MtQuantile,
    out: *mut f64,
) -> MtStatus {
    guard(|| {
        let q1 = q1.as_ref().ok_or_else(|| null("q1"))?;
        let q2 = q2.as_ref().ok_or_else(|| null("q2"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = w_infinity_1d(&q1.inner, &q2.inner).value;
        Ok(())
    })
}
