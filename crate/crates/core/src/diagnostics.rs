//! Obstruction diagnostics: one-dimensional quantile functions, the
//! ∞-Wasserstein distance, Lipschitz ratios and expectation curves.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::density::DensityFamily;
use crate::error::{Error, Result};
use crate::expr::{Bindings, ExpressionAst};
use crate::fd::{central_stencil, FdStep, RichardsonPair};
use crate::geometry::{DomainKind, Point};
use crate::quadrature::{linspace, quad, QuadOptions};

/// CDF of a density on `[nodes[0], nodes[n-1]]`, cumulated by the trapezoid
/// rule and interpolated linearly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileFunction {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
}

/// Builds the CDF of `density` sampled at sorted `nodes`; renormalised to
/// total mass one.
pub fn build_quantile(density: &[f64], nodes: &[f64]) -> Result<QuantileFunction> {
    if nodes.len() < 2 || density.len() != nodes.len() {
        return Err(Error::InvalidParam(
            "quantile needs matching nodes and values (at least two)".into(),
        ));
    }
    if !nodes.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidParam(
            "quantile nodes must be strictly increasing".into(),
        ));
    }
    if density.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParam(
            "density samples must be finite and non-negative".into(),
        ));
    }
    let mut cdf = crate::quadrature::cumulative_trapezoid(nodes, density);
    let total = *cdf.last().unwrap();
    if !(total > 0.0) {
        return Err(Error::InvalidParam("density has zero mass".into()));
    }
    cdf.iter_mut().for_each(|c| *c /= total);
    *cdf.last_mut().unwrap() = 1.0;
    Ok(QuantileFunction {
        nodes: nodes.to_vec(),
        cdf,
    })
}

impl QuantileFunction {
    /// CDF of `ρ(x, ·)` on `n` uniform nodes of the interval.
    pub fn of_family(fam: &DensityFamily, x: f64, n: usize) -> Result<Self> {
        if fam.domain().kind() != DomainKind::Interval {
            return Err(Error::InvalidParam(
                "quantile functions need the interval domain".into(),
            ));
        }
        let nodes = linspace(0.0, 1.0, n.max(2));
        let vals: Vec<f64> = nodes
            .par_iter()
            .map(|&m| fam.eval_line(x, m))
            .collect::<Result<_>>()?;
        build_quantile(&vals, &nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    pub fn cdf(&self, m: f64) -> f64 {
        let (i0, i1, s) = crate::density::bracket(&self.nodes, m);
        (1.0 - s) * self.cdf[i0] + s * self.cdf[i1]
    }

    /// Generalised inverse `inf { m : F(m) > p }`, linear within cells.
    pub fn inverse(&self, p: f64) -> f64 {
        let n = self.nodes.len();
        if p < 0.0 {
            return self.nodes[0];
        }
        let k = self.cdf.partition_point(|&c| c <= p);
        if k == 0 {
            return self.nodes[0];
        }
        if k >= n {
            return self.nodes[n - 1];
        }
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let s = (p - c0) / (c1 - c0);
        self.nodes[k - 1] + s * (self.nodes[k] - self.nodes[k - 1])
    }
}

/// `sup_p |F₁^{-1}(p) − F₂^{-1}(p)|` and where it is attained.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WInfinity {
    pub value: f64,
    pub p: f64,
}

/// ∞-Wasserstein distance between two measures on the line. Both quantile
/// functions are piecewise linear between the union of their breakpoints,
/// so the supremum over those breakpoints is exact; a local refinement
/// around the maximiser guards against flat CDF segments.
pub fn w_infinity_1d(q1: &QuantileFunction, q2: &QuantileFunction) -> WInfinity {
    let mut ps: Vec<f64> = q1.cdf.iter().chain(&q2.cdf).copied().collect();
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    w_infinity_on(q1, q2, &ps)
}

/// Same, on a user-supplied probability grid.
pub fn w_infinity_on(q1: &QuantileFunction, q2: &QuantileFunction, ps: &[f64]) -> WInfinity {
    let gap = |p: f64| (q1.inverse(p) - q2.inverse(p)).abs();
    let mut best = WInfinity { value: 0.0, p: 0.0 };
    let mut best_k = 0;
    for (k, &p) in ps.iter().enumerate() {
        // Evaluate just below each breakpoint as well, where the
        // generalised inverse jumps.
        for q in [p, (p - 1e-15).max(0.0)] {
            let g = gap(q);
            if g > best.value {
                best = WInfinity { value: g, p: q };
                best_k = k;
            }
        }
    }
    let lo = ps[best_k.saturating_sub(1)];
    let hi = ps[(best_k + 1).min(ps.len() - 1)];
    for i in 0..=64 {
        let q = lo + (hi - lo) * i as f64 / 64.0;
        let g = gap(q);
        if g > best.value {
            best = WInfinity { value: g, p: q };
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObstructionVerdict {
    BlowupDetected,
    BoundedConsistent,
}

impl ObstructionVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            ObstructionVerdict::BlowupDetected => "BLOWUP-DETECTED",
            ObstructionVerdict::BoundedConsistent => "BOUNDED-CONSISTENT",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PairRatio {
    pub x: f64,
    pub y: f64,
    pub w_inf: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObstructionReport {
    pub pairs: Vec<PairRatio>,
    /// Least-squares slope of `log ratio` against `log |x − y|`.
    pub slope: f64,
    pub r_squared: f64,
    pub verdict: ObstructionVerdict,
}

/// Ratios `W∞(μ_x, μ_y) / |x − y|` and their log-log slope; a clearly
/// negative slope indicates that no Lipschitz transport family exists.
pub fn lipschitz_obstruction(
    fam: &DensityFamily,
    pairs: &[(f64, f64)],
    n_nodes: usize,
) -> Result<ObstructionReport> {
    if pairs.len() < 3 {
        return Err(Error::InvalidParam(
            "the slope fit needs at least three pairs".into(),
        ));
    }
    let mut params: Vec<f64> = pairs.iter().flat_map(|&(x, y)| [x, y]).collect();
    params.sort_by(f64::total_cmp);
    params.dedup();
    let qs: Vec<QuantileFunction> = params
        .par_iter()
        .map(|&x| QuantileFunction::of_family(fam, x, n_nodes))
        .collect::<Result<_>>()?;
    let lookup: BTreeMap<u64, &QuantileFunction> =
        params.iter().map(|x| x.to_bits()).zip(&qs).collect();
    let mut out = Vec::with_capacity(pairs.len());
    for &(x, y) in pairs {
        if x == y {
            return Err(Error::InvalidParam(format!(
                "pair ({x}, {y}) has zero distance"
            )));
        }
        let w = w_infinity_1d(lookup[&x.to_bits()], lookup[&y.to_bits()]).value;
        out.push(PairRatio {
            x,
            y,
            w_inf: w,
            ratio: w / (x - y).abs(),
        });
    }
    let pts: Vec<(f64, f64)> = out
        .iter()
        .filter(|r| r.ratio > 1e-14)
        .map(|r| ((r.x - r.y).abs().ln(), r.ratio.ln()))
        .collect();
    let (slope, r2) = if pts.len() >= 2 {
        fit_line(&pts)
    } else {
        (0.0, 0.0)
    };
    let verdict = if pts.len() == out.len() && slope <= -0.05 && r2 >= 0.9 {
        ObstructionVerdict::BlowupDetected
    } else {
        ObstructionVerdict::BoundedConsistent
    };
    Ok(ObstructionReport {
        pairs: out,
        slope,
        r_squared: r2,
        verdict,
    })
}

/// Least-squares slope and coefficient of determination.
pub fn fit_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, 0.0);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, r2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SmoothnessVerdict {
    SmoothConsistent,
    NonsmoothSuspect,
}

impl SmoothnessVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            SmoothnessVerdict::SmoothConsistent => "SMOOTH-CONSISTENT",
            SmoothnessVerdict::NonsmoothSuspect => "NONSMOOTH-SUSPECT",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    pub value: f64,
    /// Derivative estimates of orders `1..=k`.
    pub derivatives: Vec<RichardsonPair>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpectationCurve {
    pub h: String,
    pub points: Vec<CurvePoint>,
    pub verdict: SmoothnessVerdict,
}

/// `E_h(x) = ∫ h dμ_x` by adaptive quadrature.
pub fn expectation(fam: &DensityFamily, h: &ExpressionAst, x: f64) -> Result<f64> {
    let opts = QuadOptions::with_tol(1e-14, 1e-12);
    let err = std::cell::RefCell::new(None);
    let integrand = |a: f64, m: f64| -> f64 {
        let r = fam
            .eval(x, Point::new(a, m))
            .and_then(|rho| Ok(rho * h.eval(&Bindings { x, a, t: m })?));
        match r {
            Ok(v) => v,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    };
    let v = match fam.domain().kind() {
        DomainKind::Interval => quad(|m| integrand(0.0, m), 0.0, 1.0, opts),
        _ => {
            let period = fam.domain().circumference();
            quad(
                |m| quad(|a| integrand(a, m), 0.0, period, opts).unwrap_or(f64::NAN),
                0.0,
                1.0,
                opts,
            )
        }
    };
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    v
}

/// `E_h` and its finite-difference derivatives up to order `k` on `x_grid`.
pub fn expectation_curve(
    fam: &DensityFamily,
    h: &ExpressionAst,
    x_grid: &[f64],
    k: usize,
    step: FdStep,
) -> Result<ExpectationCurve> {
    let range = fam.params();
    let points: Vec<CurvePoint> = x_grid
        .par_iter()
        .map(|&x| {
            let value = expectation(fam, h, x)?;
            let mut derivatives = Vec::with_capacity(k);
            for order in 1..=k {
                let hx = step.at(x);
                let reach = order as f64 / 2.0 * hx;
                // Shift the stencil inward when it would leave X.
                let c = x.clamp(range.lo + reach, range.hi - reach);
                let diff = |hh: f64| -> Result<f64> {
                    let mut acc = 0.0;
                    for (o, w) in central_stencil(order) {
                        acc += w * expectation(fam, h, c + o * hh)?;
                    }
                    Ok(acc / hh.powi(order as i32))
                };
                let (coarse, fine) = (diff(hx)?, diff(0.5 * hx)?);
                let noise = 1e-10 * value.abs().max(1e-300) / (0.5 * hx).powi(order as i32);
                derivatives.push(RichardsonPair::new(coarse, fine, noise));
            }
            Ok(CurvePoint {
                x,
                value,
                derivatives,
            })
        })
        .collect::<Result<_>>()?;
    let stable = points
        .iter()
        .all(|p| p.derivatives.iter().all(|d| d.stable));
    Ok(ExpectationCurve {
        h: h.source().to_string(),
        points,
        verdict: if stable {
            SmoothnessVerdict::SmoothConsistent
        } else {
            SmoothnessVerdict::NonsmoothSuspect
        },
    })
}

/// Kolmogorov–Smirnov distance between samples and a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = cdf(v);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}
