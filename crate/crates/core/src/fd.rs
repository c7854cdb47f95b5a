//! Central finite differences with Richardson-pair stability checks.

use serde::Serialize;

/// Step-size policy for differences in the parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FdStep {
    Absolute {
        h: f64,
    },
    /// `h = frac * max(|x - center|, floor)`, for probes that refine toward
    /// a distinguished parameter value.
    Relative {
        frac: f64,
        floor: f64,
        center: f64,
    },
}

impl FdStep {
    pub fn at(&self, x: f64) -> f64 {
        match *self {
            FdStep::Absolute { h } => h,
            FdStep::Relative {
                frac,
                floor,
                center,
            } => frac * (x - center).abs().max(floor),
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Stencil offsets (in units of `h`) and weights for the `n`-th central
/// difference: `Σ w_i f(x + o_i h) / h^n`.
pub fn central_stencil(n: usize) -> Vec<(f64, f64)> {
    (0..=n)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            (n as f64 / 2.0 - i as f64, sign * binomial(n, i))
        })
        .collect()
}

/// `n`-th derivative of `f` at `x` by a central difference with step `h`.
pub fn central_derivative<F: FnMut(f64) -> f64>(mut f: F, x: f64, n: usize, h: f64) -> f64 {
    let s: f64 = central_stencil(n)
        .into_iter()
        .map(|(o, w)| w * f(x + o * h))
        .sum();
    s / h.powi(n as i32)
}

/// Estimates at steps `h` and `h/2` plus the stability flag.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RichardsonPair {
    pub coarse: f64,
    pub fine: f64,
    /// `coarse / fine`; 1 when both vanish.
    pub ratio: f64,
    pub stable: bool,
}

impl RichardsonPair {
    /// Magnitudes below `noise` are treated as zero.
    pub fn new(coarse: f64, fine: f64, noise: f64) -> Self {
        let (ca, fa) = (coarse.abs(), fine.abs());
        let ratio = if ca <= noise && fa <= noise {
            1.0
        } else if fa == 0.0 {
            f64::INFINITY
        } else {
            ca / fa
        };
        let finite = coarse.is_finite() && fine.is_finite();
        RichardsonPair {
            coarse,
            fine,
            ratio,
            stable: finite && (0.5..=2.0).contains(&ratio),
        }
    }

    /// Richardson-extrapolated value for a second-order scheme.
    pub fn extrapolated(&self) -> f64 {
        (4.0 * self.fine - self.coarse) / 3.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stencils() {
        assert_eq!(central_stencil(1), vec![(0.5, 1.0), (-0.5, -1.0)]);
        assert_eq!(
            central_stencil(2),
            vec![(1.0, 1.0), (0.0, -2.0), (-1.0, 1.0)]
        );
        assert_relative_eq!(
            central_derivative(f64::exp, 0.3, 3, 1e-2),
            0.3f64.exp(),
            epsilon = 1e-4
        );
        assert_relative_eq!(
            central_derivative(|x| x * x, 2.0, 2, 0.1),
            2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn second_order_convergence() {
        let f = |x: f64| (2.0 * x).sin();
        let exact = 2.0 * 0.6f64.cos();
        let e1 = (central_derivative(f, 0.3, 1, 0.1) - exact).abs();
        let e2 = (central_derivative(f, 0.3, 1, 0.05) - exact).abs();
        assert!((e1 / e2).log2() > 1.9);
    }
}
