//! Parametrised density families `x ↦ ρ(x, ·)`, reference densities and
//! decay envelopes.

mod assumptions;
mod envelope;
mod reference;

pub use assumptions::{
    check_decay_assumptions, AssumptionReport, Condition, Margin, ProbeOptions, Verdict,
};
pub use envelope::{envelope_library, DecayEnvelope, EnvelopeKind};
pub use reference::{make_reference, make_reference_with, ReferenceDensity, ReferenceOptions};

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{parse_density_expression, Bindings, ExpressionAst, Var};
use crate::fd::central_stencil;
use crate::geometry::{collar_coordinate, BoundarySide, Domain, DomainKind, Point};
use crate::jet::{Jet, Scalar, MAX_ORDER};
use crate::quadrature::{quad, QuadOptions};

/// Closed interval of admissible parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
}

impl ParamRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParam(format!(
                "parameter range [{lo}, {hi}] is empty"
            )));
        }
        Ok(ParamRange { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        let slack = 1e-12 * (self.hi - self.lo);
        x >= self.lo - slack && x <= self.hi + slack
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// `n` equispaced samples including both ends.
    pub fn samples(&self, n: usize) -> Vec<f64> {
        if n <= 1 {
            return vec![self.midpoint()];
        }
        (0..n)
            .map(|k| self.lo + self.width() * k as f64 / (n - 1) as f64)
            .collect()
    }
}

/// Where a family came from; decides how derivatives are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Builtin,
    Expression,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "builtin", rename_all = "snake_case")]
pub enum Builtin {
    Example1,
    Example2 {
        k: usize,
        c0: f64,
        i1: f64,
    },
    Affine {
        c: f64,
    },
    HPower {
        alpha: f64,
        kappa: f64,
    },
    HStretched {
        alpha: f64,
        kappa: f64,
        z0: f64,
        z1: f64,
    },
    HLoglog {
        kappa: f64,
        z0: f64,
        z1: f64,
    },
    Constant {
        value: f64,
    },
}

/// Samples of `ρ(x, m)` on a tensor grid, bilinearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    xs: Vec<f64>,
    ms: Vec<f64>,
    /// Row-major, `values[i * ms.len() + j] = ρ(xs[i], ms[j])`.
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Builtin(Builtin),
    Expression(Arc<ExpressionAst>),
    Tabulated(Arc<Table>),
}

/// A family of probability densities on a domain, indexed by `x ∈ X`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityFamily {
    name: String,
    domain: Domain,
    params: ParamRange,
    order: usize,
    kind: Kind,
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn check_keys(params: &BTreeMap<String, f64>, allowed: &[&str], family: &str) -> Result<()> {
    for key in params.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::InvalidParam(format!(
                "family `{family}` has no parameter `{key}` (expected one of: {})",
                allowed.join(", ")
            )));
        }
    }
    Ok(())
}

fn int_param(params: &BTreeMap<String, f64>, key: &str, default: usize) -> Result<usize> {
    let v = param(params, key, default as f64);
    if v < 0.0 || v.fract() != 0.0 || v > MAX_ORDER as f64 {
        return Err(Error::InvalidParam(format!(
            "`{key}` must be an integer in 0..={MAX_ORDER}, got {v}"
        )));
    }
    Ok(v as usize)
}

const TIGHT: QuadOptions = QuadOptions {
    abs_tol: 1e-15,
    rel_tol: 1e-13,
    max_intervals: 20000,
};

/// Names accepted by [`builtin_family`].
pub const BUILTIN_NAMES: [&str; 7] = [
    "example1",
    "example2",
    "affine",
    "h_power",
    "h_stretched",
    "h_loglog",
    "constant",
];

/// Builds one of the named families on the interval. Unknown parameters and
/// out-of-range values are rejected.
pub fn builtin_family(name: &str, params: &BTreeMap<String, f64>) -> Result<DensityFamily> {
    let interval = Domain::interval();
    let k = int_param(params, "k", 2)?;
    let (builtin, range) = match name {
        "example1" => {
            check_keys(params, &["k"], name)?;
            (Builtin::Example1, ParamRange::new(-1.0, 1.0)?)
        }
        "example2" => {
            check_keys(params, &["k"], name)?;
            let i1 = quad(|m| m.powi(5) * (1.0 / m).sin().powi(2), 1e-300, 1.0, TIGHT)?;
            let c0 = 1.0 - 2.0 * i1 - 1.0 / 31.0;
            if c0 - i1 <= 0.0 {
                return Err(Error::InvalidParam(
                    "example2 normaliser is not positive".into(),
                ));
            }
            (Builtin::Example2 { k, c0, i1 }, ParamRange::new(-1.0, 1.0)?)
        }
        "affine" => {
            check_keys(params, &["k", "c"], name)?;
            let c = param(params, "c", 0.5);
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::InvalidParam(format!(
                    "affine needs 0 < c < 1, got {c}"
                )));
            }
            (Builtin::Affine { c }, ParamRange::new(-c, c)?)
        }
        "h_power" => {
            check_keys(params, &["k", "alpha", "kappa"], name)?;
            let alpha = param(params, "alpha", 2.0);
            let kappa = param(params, "kappa", 0.5);
            if !(alpha > 0.0) {
                return Err(Error::InvalidParam(format!(
                    "h_power needs alpha > 0, got {alpha}"
                )));
            }
            check_kappa(kappa)?;
            (Builtin::HPower { alpha, kappa }, ParamRange::new(0.0, 1.0)?)
        }
        "h_stretched" => {
            check_keys(params, &["k", "alpha", "kappa"], name)?;
            let alpha = param(params, "alpha", 1.0);
            let kappa = param(params, "kappa", 0.5);
            if !(alpha > 0.0) {
                return Err(Error::InvalidParam(format!(
                    "h_stretched needs alpha > 0, got {alpha}"
                )));
            }
            check_kappa(kappa)?;
            let w = |m: f64| {
                if m <= 0.0 {
                    0.0
                } else {
                    (-m.powf(-alpha)).exp()
                }
            };
            let z0 = quad(w, 0.0, 1.0, TIGHT)?;
            let z1 = quad(|m| m * w(m), 0.0, 1.0, TIGHT)?;
            (
                Builtin::HStretched {
                    alpha,
                    kappa,
                    z0,
                    z1,
                },
                ParamRange::new(0.0, 1.0)?,
            )
        }
        "h_loglog" => {
            check_keys(params, &["k", "kappa"], name)?;
            let kappa = param(params, "kappa", 0.5);
            check_kappa(kappa)?;
            let w = |m: f64| if m <= 0.0 { 0.0 } else { 1.0 / (1.0 - m.ln()) };
            let z0 = quad(w, 0.0, 1.0, TIGHT)?;
            let z1 = quad(|m| m * w(m), 0.0, 1.0, TIGHT)?;
            (
                Builtin::HLoglog { kappa, z0, z1 },
                ParamRange::new(0.0, 1.0)?,
            )
        }
        "constant" => {
            check_keys(params, &["k"], name)?;
            (
                Builtin::Constant { value: 1.0 },
                ParamRange::new(-1.0, 1.0)?,
            )
        }
        other => {
            return Err(Error::InvalidParam(format!(
                "unknown builtin family `{other}` (expected one of: {})",
                BUILTIN_NAMES.join(", ")
            )))
        }
    };
    Ok(DensityFamily {
        name: name.to_string(),
        domain: interval,
        params: range,
        order: k,
        kind: Kind::Builtin(builtin),
    })
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > -1.0 && kappa.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "kappa must exceed -1, got {kappa}"
        )));
    }
    Ok(())
}

/// `1 + κ x m` as a scalar.
fn tilt<S: Scalar>(kappa: f64, x: S, m: S) -> S {
    (x * m).scale(kappa).add_f64(1.0)
}

impl Builtin {
    fn eval<S: Scalar>(&self, x: S, m: S) -> S {
        let zero = S::from_f64(0.0);
        match *self {
            Builtin::Example1 => {
                let x2 = x * x;
                (x2 * m).scale(2.0) + (-x2).add_f64(1.0) * m.powi(4).scale(5.0)
            }
            Builtin::Example2 { k, c0, i1 } => {
                let osc = if m.value() <= 0.0 {
                    zero
                } else {
                    let s = (S::from_f64(1.0) / m).sin();
                    x.add_f64(2.0) * m.powi(5) * s * s
                };
                let d = 2 * k as i32 + 2;
                let bump = if m.value() <= 0.5 {
                    zero
                } else {
                    m.scale(2.0)
                        .add_f64(-1.0)
                        .powi(d)
                        .scale(2.0 * (d + 1) as f64)
                };
                // c(x) = 1 - (2 + x) I1 - 1/31
                let c = (-x).scale(i1).add_f64(c0);
                osc + m.powi(30) + c * bump
            }
            Builtin::Affine { .. } => x * m.scale(2.0).add_f64(-1.0) + S::from_f64(1.0),
            Builtin::HPower { alpha, kappa } => {
                if m.value() <= 0.0 {
                    return zero;
                }
                let z = x.scale(kappa / (alpha + 2.0)).add_f64(1.0 / (alpha + 1.0));
                tilt(kappa, x, m) * m.powf(alpha) / z
            }
            Builtin::HStretched {
                alpha,
                kappa,
                z0,
                z1,
            } => {
                if m.value() <= 0.0 {
                    return zero;
                }
                let z = x.scale(kappa * z1).add_f64(z0);
                tilt(kappa, x, m) * (-m.powf(-alpha)).exp() / z
            }
            Builtin::HLoglog { kappa, z0, z1 } => {
                if m.value() <= 0.0 {
                    return zero;
                }
                let z = x.scale(kappa * z1).add_f64(z0);
                tilt(kappa, x, m) / ((-m.ln()).add_f64(1.0) * z)
            }
            Builtin::Constant { value } => S::from_f64(value),
        }
    }
}

impl Table {
    fn eval(&self, x: f64, m: f64) -> f64 {
        let (i0, i1, r) = bracket(&self.xs, x);
        let (j0, j1, s) = bracket(&self.ms, m);
        let nm = self.ms.len();
        let v = |i: usize, j: usize| self.values[i * nm + j];
        (1.0 - r) * ((1.0 - s) * v(i0, j0) + s * v(i0, j1))
            + r * ((1.0 - s) * v(i1, j0) + s * v(i1, j1))
    }
}

/// Index pair and fraction locating `v` in the sorted nodes (clamped).
pub fn bracket(nodes: &[f64], v: f64) -> (usize, usize, f64) {
    let n = nodes.len();
    if n == 1 || v <= nodes[0] {
        return (0, usize::from(n > 1), 0.0);
    }
    if v >= nodes[n - 1] {
        return (n - 2, n - 1, 1.0);
    }
    let k = nodes.partition_point(|&z| z <= v);
    let (lo, hi) = (nodes[k - 1], nodes[k]);
    (k - 1, k, (v - lo) / (hi - lo))
}

impl DensityFamily {
    /// Family defined by an expression in `x`, `m` (or `t`) and, on the
    /// cylinder and torus, `a`.
    pub fn from_expression(
        domain: Domain,
        expr: ExpressionAst,
        params: ParamRange,
        order: usize,
    ) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::InvalidParam(format!(
                "order {order} exceeds {MAX_ORDER}"
            )));
        }
        if domain.kind() == DomainKind::Interval && expr.uses(Var::A) {
            return Err(Error::InvalidParam(
                "variable `a` is not available on the interval".into(),
            ));
        }
        Ok(DensityFamily {
            name: expr.source().to_string(),
            domain,
            params,
            order,
            kind: Kind::Expression(Arc::new(expr)),
        })
    }

    pub fn parse(domain: Domain, text: &str, params: ParamRange, order: usize) -> Result<Self> {
        Self::from_expression(domain, parse_density_expression(text)?, params, order)
    }

    /// Uniform density on `domain`.
    pub fn constant(domain: Domain, params: ParamRange, order: usize) -> Self {
        DensityFamily {
            name: "constant".into(),
            domain,
            params,
            order,
            kind: Kind::Builtin(Builtin::Constant {
                value: 1.0 / domain.volume(),
            }),
        }
    }

    /// Family given by samples on a tensor grid of the interval. Derivatives
    /// are taken by finite differences.
    pub fn tabulated(xs: Vec<f64>, ms: Vec<f64>, values: Vec<f64>, order: usize) -> Result<Self> {
        let sorted = |v: &[f64]| v.len() >= 2 && v.windows(2).all(|w| w[0] < w[1]);
        if !sorted(&xs) || !sorted(&ms) {
            return Err(Error::InvalidParam(
                "table nodes must be strictly increasing with at least two entries".into(),
            ));
        }
        if values.len() != xs.len() * ms.len() {
            return Err(Error::InvalidParam(format!(
                "table has {} values, expected {}",
                values.len(),
                xs.len() * ms.len()
            )));
        }
        if ms[0] != 0.0 || *ms.last().unwrap() != 1.0 {
            return Err(Error::InvalidParam("table must span m in [0, 1]".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParam(
                "table values must be finite and non-negative".into(),
            ));
        }
        let params = ParamRange::new(xs[0], *xs.last().unwrap())?;
        Ok(DensityFamily {
            name: "tabulated".into(),
            domain: Domain::interval(),
            params,
            order,
            kind: Kind::Tabulated(Arc::new(Table { xs, ms, values })),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn params(&self) -> ParamRange {
        self.params
    }

    /// Declared smoothness order `k`.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn provenance(&self) -> Provenance {
        match self.kind {
            Kind::Builtin(_) => Provenance::Builtin,
            Kind::Expression(_) => Provenance::Expression,
            Kind::Tabulated(_) => Provenance::Tabulated,
        }
    }

    pub fn builtin(&self) -> Option<&Builtin> {
        match &self.kind {
            Kind::Builtin(b) => Some(b),
            _ => None,
        }
    }

    pub fn expression(&self) -> Option<&ExpressionAst> {
        match &self.kind {
            Kind::Expression(e) => Some(e),
            _ => None,
        }
    }

    /// Whether [`DensityFamily::jet`] is available.
    pub fn has_exact_derivatives(&self) -> bool {
        !matches!(self.kind, Kind::Tabulated(_))
    }

    fn check_args(&self, x: f64, p: Point) -> Result<()> {
        if !self.params.contains(x) {
            return Err(Error::OutOfDomain(format!(
                "parameter x = {x} outside [{}, {}]",
                self.params.lo, self.params.hi
            )));
        }
        if !self.domain.contains(p) {
            return Err(Error::OutOfDomain(format!(
                "point ({}, {}) outside the domain",
                p.a, p.t
            )));
        }
        Ok(())
    }

    fn eval_scalar<S: Scalar>(&self, x: S, a: S, m: S) -> Result<S> {
        match &self.kind {
            Kind::Builtin(b) => Ok(b.eval(x, m)),
            Kind::Expression(e) => e.eval(&Bindings { x, a, t: m }),
            Kind::Tabulated(_) => unreachable!("tabulated families are evaluated directly"),
        }
    }

    /// `ρ(x, p)`.
    pub fn eval(&self, x: f64, p: Point) -> Result<f64> {
        self.check_args(x, p)?;
        let v = match &self.kind {
            Kind::Tabulated(t) => t.eval(x, p.t),
            _ => self.eval_scalar(x, p.a, p.t)?,
        };
        if !v.is_finite() || v < 0.0 {
            return Err(Error::EvalDomain(format!(
                "density value {v} at x = {x}, ({}, {}) is not a finite non-negative number",
                p.a, p.t
            )));
        }
        Ok(v)
    }

    /// `ρ(x, m)` on the interval.
    pub fn eval_line(&self, x: f64, m: f64) -> Result<f64> {
        self.eval(x, Point::on_line(m))
    }

    /// Taylor jet of `ρ` in `(x, t)` where `t` is the collar coordinate
    /// attached to `side`, with all mixed partials up to total `order`.
    pub fn jet(&self, x: f64, p: Point, side: BoundarySide, order: usize) -> Result<Jet> {
        self.check_args(x, p)?;
        if !self.has_exact_derivatives() {
            return Err(Error::InvalidParam(
                "tabulated families have no exact derivatives".into(),
            ));
        }
        if order > MAX_ORDER {
            return Err(Error::InvalidParam(format!(
                "order {order} exceeds {MAX_ORDER}"
            )));
        }
        let t = Jet::var_t(collar_coordinate(side, p), order);
        let m = match side {
            BoundarySide::Lower => t,
            BoundarySide::Upper => (-t).add_f64(1.0),
        };
        self.eval_scalar(Jet::var_x(x, order), Jet::constant(p.a), m)
    }

    /// Jet in `x` alone at fixed `p`.
    pub fn x_jet(&self, x: f64, p: Point, order: usize) -> Result<Jet> {
        self.check_args(x, p)?;
        if !self.has_exact_derivatives() {
            return Err(Error::InvalidParam(
                "tabulated families have no exact derivatives".into(),
            ));
        }
        self.eval_scalar(Jet::var_x(x, order), Jet::constant(p.a), Jet::constant(p.t))
    }

    /// `D_x^β D_t^j ρ` by nested central differences with steps `hx`, `ht`
    /// (`t` is the collar coordinate of `side`). Steps shrink near the edges
    /// so the stencil stays inside the domain.
    pub fn fd_derivative(
        &self,
        x: f64,
        p: Point,
        side: BoundarySide,
        beta: usize,
        j: usize,
        hx: f64,
        ht: f64,
    ) -> Result<f64> {
        self.check_args(x, p)?;
        let hx = fit_step(hx, x - self.params.lo, self.params.hi - x, beta);
        let t0 = collar_coordinate(side, p);
        let ht = if self.domain.kind() == DomainKind::Torus {
            ht
        } else {
            fit_step(ht, t0, 1.0 - t0, j)
        };
        let sx = central_stencil(beta);
        let st = central_stencil(j);
        let mut acc = 0.0;
        for &(ox, wx) in &sx {
            for &(ot, wt) in &st {
                let t = t0 + ot * ht;
                let axial = match side {
                    BoundarySide::Lower => t,
                    BoundarySide::Upper => 1.0 - t,
                };
                let q = self.domain.wrap(Point::new(p.a, axial));
                acc += wx * wt * self.eval(x + ox * hx, q)?;
            }
        }
        Ok(acc / (hx.powi(beta as i32) * ht.powi(j as i32)))
    }

    /// `D_x^β D_t^j ρ`, exact when a jet is available and by finite
    /// differences (steps `fd`) otherwise.
    pub fn derivative(
        &self,
        x: f64,
        p: Point,
        side: BoundarySide,
        beta: usize,
        j: usize,
        fd: (f64, f64),
    ) -> Result<f64> {
        if self.has_exact_derivatives() {
            Ok(self.jet(x, p, side, beta + j)?.derivative(beta, j))
        } else {
            self.fd_derivative(x, p, side, beta, j, fd.0, fd.1)
        }
    }

    /// `∫_M ρ(x, ·)`.
    pub fn mass(&self, x: f64) -> Result<f64> {
        let opts = QuadOptions::with_tol(1e-13, 1e-11);
        let err = std::cell::RefCell::new(None);
        let along = |a: f64, t: f64| match self.eval(x, Point::new(a, t)) {
            Ok(v) => v,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        };
        let res = match self.domain.kind() {
            DomainKind::Interval => quad(|m| along(0.0, m), 0.0, 1.0, opts),
            _ => {
                let period = self.domain.circumference();
                quad(
                    |t| quad(|a| along(a, t), 0.0, period, opts).unwrap_or(f64::NAN),
                    0.0,
                    1.0,
                    opts,
                )
            }
        };
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        res
    }

    /// Verifies `|∫ρ(x,·) − 1| ≤ tol` at `n` equispaced parameters.
    pub fn check_normalisation(&self, n: usize, tol: f64) -> Result<()> {
        for x in self.params.samples(n) {
            let m = self.mass(x)?;
            if (m - 1.0).abs() > tol {
                return Err(Error::InvalidParam(format!(
                    "density `{}` has mass {m} at x = {x} (tolerance {tol:e})",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Shrinks `h` so an order-`n` central stencil fits between the edges.
fn fit_step(h: f64, below: f64, above: f64, n: usize) -> f64 {
    if n == 0 {
        return h;
    }
    let reach = n as f64 / 2.0;
    h.min(below.max(0.0) / reach)
        .min(above.max(0.0) / reach)
        .max(f64::MIN_POSITIVE)
}

/// Parses the `key=value, key=value` parameter syntax used by the FFI and
/// command line helpers.
pub fn parse_param_list(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for item in text
        .split([',', ';'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
    {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidParam(format!("expected key=value, got `{item}`")))?;
        let value = parse_density_expression(v.trim())?.constant_value()?;
        out.insert(k.trim().to_string(), value);
    }
    Ok(out)
}
