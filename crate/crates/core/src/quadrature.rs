//! Adaptive Gauss–Kronrod quadrature and cumulative trapezoid sums.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: 1e-14,
            rel_tol: 1e-12,
            max_intervals: 4000,
        }
    }
}

impl QuadOptions {
    pub fn with_tol(abs_tol: f64, rel_tol: f64) -> Self {
        QuadOptions {
            abs_tol,
            rel_tol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
    /// The tolerance was not met because bisection stopped reducing the
    /// error: the integrand's own rounding noise dominates.
    pub roundoff_limited: bool,
}

/// Stalled bisections tolerated before the result is accepted as
/// roundoff-limited.
const ROUNDOFF_SPLITS: usize = 20;

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for k in 0..7 {
        let dx = h * XGK[k];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Integrates `f` over `[a, b]`; `Err` if the tolerance is not reached
/// within the interval budget or the integrand is not finite.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    opts: QuadOptions,
) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            intervals: 0,
            roundoff_limited: false,
        });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut parts = vec![{
        let (v, e) = gk15(&mut f, lo, hi);
        (lo, hi, v, e)
    }];
    let mut stalled_splits = 0;
    loop {
        let value: f64 = parts.iter().map(|p| p.2).sum();
        let error: f64 = parts.iter().map(|p| p.3).sum();
        if !value.is_finite() || !error.is_finite() {
            return Err(Error::Quadrature(format!(
                "non-finite integrand on [{lo}, {hi}]"
            )));
        }
        if error <= opts.abs_tol.max(opts.rel_tol * value.abs()) {
            return Ok(QuadResult {
                value: sign * value,
                error,
                intervals: parts.len(),
                roundoff_limited: false,
            });
        }
        if stalled_splits >= ROUNDOFF_SPLITS {
            return Ok(QuadResult {
                value: sign * value,
                error,
                intervals: parts.len(),
                roundoff_limited: true,
            });
        }
        if parts.len() >= opts.max_intervals {
            return Err(Error::Quadrature(format!(
                "error estimate {error:e} above tolerance after {} subintervals on [{lo}, {hi}]",
                parts.len()
            )));
        }
        let (k, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (l, r, v, e) = parts.swap_remove(k);
        let mid = 0.5 * (l + r);
        if mid <= l || mid >= r {
            // Interval below floating-point resolution; accept what we have.
            let value: f64 = parts.iter().map(|p| p.2).sum::<f64>() + gk15(&mut f, l, r).0;
            return Ok(QuadResult {
                value: sign * value,
                error,
                intervals: parts.len() + 1,
                roundoff_limited: true,
            });
        }
        let (v1, e1) = gk15(&mut f, l, mid);
        let (v2, e2) = gk15(&mut f, mid, r);
        // A split that leaves the value unchanged but not the error means
        // the estimate is measuring noise in f, not truncation.
        if (v - (v1 + v2)).abs() <= 1e-5 * (v1 + v2).abs() && e1 + e2 >= 0.99 * e {
            stalled_splits += 1;
        }
        parts.push((l, mid, v1, e1));
        parts.push((mid, r, v2, e2));
    }
}

/// Convenience wrapper returning only the value.
pub fn quad<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<f64> {
    integrate(f, a, b, opts).map(|r| r.value)
}

/// Cumulative trapezoid integral of samples `ys` at nodes `xs`, starting at 0.
pub fn cumulative_trapezoid(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    debug_assert_eq!(xs.len(), ys.len());
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..xs.len() {
        acc += 0.5 * (ys[k] + ys[k - 1]) * (xs[k] - xs[k - 1]);
        out.push(acc);
    }
    out
}

/// Geometric nodes from `lo` to `hi` (both positive), inclusive.
pub fn geomspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let r = (hi / lo).ln() / (n - 1) as f64;
    (0..n)
        .map(|k| {
            if k + 1 == n {
                hi
            } else {
                lo * (r * k as f64).exp()
            }
        })
        .collect()
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|k| {
            if k + 1 == n {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (n - 1) as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomials_and_smooth_functions() {
        let o = QuadOptions::default();
        assert_relative_eq!(
            quad(|m| 5.0 * m.powi(4), 0.0, 1.0, o).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            quad(f64::sin, 0.0, std::f64::consts::PI, o).unwrap(),
            2.0,
            epsilon = 1e-13
        );
        assert_relative_eq!(
            quad(|m| m.sqrt(), 0.0, 1.0, o).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(quad(|m| m, 1.0, 0.0, o).unwrap(), -0.5, epsilon = 1e-15);
    }

    #[test]
    fn tiny_integrands_relative_accuracy() {
        let o = QuadOptions::with_tol(0.0, 1e-12);
        let v = quad(|m| m.powi(4), 0.0, 1e-5, o).unwrap();
        assert_relative_eq!(v, 1e-25 / 5.0, max_relative = 1e-12);
    }

    #[test]
    fn oscillatory_integrand() {
        let v = quad(
            |m| m.powi(5) * (1.0 / m).sin().powi(2),
            1e-300,
            1.0,
            QuadOptions::default(),
        )
        .unwrap();
        assert!(v > 0.1 && v < 1.0 / 6.0);
    }

    #[test]
    fn noisy_integrand_is_roundoff_limited() {
        // 1 − (1 − t) carries absolute rounding noise of order 1e-16.
        let r = integrate(
            |t| 1.0 - (1.0 - t),
            0.0,
            1e-6,
            QuadOptions::with_tol(1e-300, 1e-14),
        )
        .unwrap();
        assert!(r.roundoff_limited);
        assert!((r.value - 5e-13).abs() < 1e-20);
    }

    #[test]
    fn non_finite_reports_error() {
        assert!(quad(|m| 1.0 / m, 0.0, 1.0, QuadOptions::default()).is_err());
    }
}
