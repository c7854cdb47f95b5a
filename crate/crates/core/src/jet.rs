//! Truncated bivariate Taylor arithmetic.
//!
//! A [`Jet`] carries the Taylor coefficients of a function of two variables
//! (the parameter `x` and the collar coordinate `t`) up to a total degree.
//! Densities are written once against [`Scalar`] and evaluated either on
//! plain `f64` or on jets, which yields exact mixed partial derivatives
//! `D_x^β D_t^j ρ` without finite differences.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Highest supported total derivative order.
pub const MAX_ORDER: usize = 8;
const LEN: usize = (MAX_ORDER + 1) * (MAX_ORDER + 2) / 2;

#[inline]
const fn slot(i: usize, j: usize) -> usize {
    let d = i + j;
    d * (d + 1) / 2 + j
}

/// Numeric type densities and expressions are evaluated over.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn powf(self, p: f64) -> Self;

    fn pow(self, e: Self) -> Self {
        (e * self.ln()).exp()
    }

    fn min(self, other: Self) -> Self {
        if other.value() < self.value() {
            other
        } else {
            self
        }
    }

    fn max(self, other: Self) -> Self {
        if other.value() > self.value() {
            other
        } else {
            self
        }
    }

    fn scale(self, k: f64) -> Self {
        self * Self::from_f64(k)
    }

    fn add_f64(self, k: f64) -> Self {
        self + Self::from_f64(k)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn pow(self, e: Self) -> Self {
        f64::powf(self, e)
    }
}

/// Taylor polynomial in `(x, t)` truncated at total degree `order`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    order: usize,
    c: [f64; LEN],
}

impl Jet {
    pub fn constant(v: f64) -> Jet {
        let mut c = [0.0; LEN];
        c[0] = v;
        Jet { order: 0, c }
    }

    /// The parameter variable `x` expanded around `v`.
    pub fn var_x(v: f64, order: usize) -> Jet {
        Self::variable(v, order, slot(1, 0))
    }

    /// The collar variable `t` expanded around `v`.
    pub fn var_t(v: f64, order: usize) -> Jet {
        Self::variable(v, order, slot(0, 1))
    }

    fn variable(v: f64, order: usize, s: usize) -> Jet {
        assert!(order <= MAX_ORDER, "jet order {order} exceeds {MAX_ORDER}");
        let mut c = [0.0; LEN];
        c[0] = v;
        if order >= 1 {
            c[s] = 1.0;
        }
        Jet { order, c }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Taylor coefficient of `dx^i dt^j`.
    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        if i + j > self.order {
            0.0
        } else {
            self.c[slot(i, j)]
        }
    }

    /// The partial derivative `D_x^i D_t^j` at the expansion point.
    pub fn derivative(&self, i: usize, j: usize) -> f64 {
        self.coeff(i, j) * factorial(i) * factorial(j)
    }

    fn zeros(order: usize) -> Jet {
        Jet {
            order,
            c: [0.0; LEN],
        }
    }

    fn len(&self) -> usize {
        slot(0, self.order) + 1
    }

    /// `Σ_n coef[n] · (self − self₀)^n`, the composition of a univariate
    /// Taylor series with this jet.
    fn compose(&self, coef: &[f64]) -> Jet {
        let mut delta = *self;
        delta.c[0] = 0.0;
        let mut out = Jet::zeros(self.order);
        out.c[0] = coef[0];
        let mut power = delta;
        for &a in coef.iter().take(self.order + 1).skip(1) {
            for k in 0..self.len() {
                out.c[k] += a * power.c[k];
            }
            power = power * delta;
        }
        out
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        let mut out = Jet::zeros(self.order.max(rhs.order));
        for k in 0..out.len() {
            out.c[k] = self.c[k] + rhs.c[k];
        }
        out
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        let mut out = Jet::zeros(self.order.max(rhs.order));
        for k in 0..out.len() {
            out.c[k] = self.c[k] - rhs.c[k];
        }
        out
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        for v in self.c.iter_mut() {
            *v = -*v;
        }
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let order = self.order.max(rhs.order);
        if self.order == 0 || rhs.order == 0 {
            let (s, j) = if self.order == 0 {
                (self.c[0], rhs)
            } else {
                (rhs.c[0], self)
            };
            let mut out = Jet::zeros(order);
            for k in 0..out.len() {
                out.c[k] = s * j.c[k];
            }
            return out;
        }
        let mut out = Jet::zeros(order);
        for d1 in 0..=order {
            for j1 in 0..=d1 {
                let a = self.c[slot(d1 - j1, j1)];
                if a == 0.0 {
                    continue;
                }
                for d2 in 0..=(order - d1) {
                    for j2 in 0..=d2 {
                        let i = d1 - j1 + d2 - j2;
                        out.c[slot(i, j1 + j2)] += a * rhs.c[slot(d2 - j2, j2)];
                    }
                }
            }
        }
        out
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        if rhs.order == 0 {
            let inv = 1.0 / rhs.c[0];
            let mut out = self;
            for v in out.c.iter_mut() {
                *v *= inv;
            }
            return out;
        }
        let b = rhs.c[0];
        let n = rhs.order;
        let coef: Vec<f64> = (0..=n)
            .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 } / b.powi(k as i32 + 1))
            .collect();
        self * rhs.compose(&coef)
    }
}

impl Scalar for Jet {
    fn from_f64(v: f64) -> Self {
        Jet::constant(v)
    }

    fn value(&self) -> f64 {
        self.c[0]
    }

    fn exp(self) -> Self {
        let e = self.c[0].exp();
        let coef: Vec<f64> = (0..=self.order).map(|k| e / factorial(k)).collect();
        self.compose(&coef)
    }

    fn ln(self) -> Self {
        let a = self.c[0];
        let coef: Vec<f64> = (0..=self.order)
            .map(|k| {
                if k == 0 {
                    a.ln()
                } else {
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    sign / (k as f64 * a.powi(k as i32))
                }
            })
            .collect();
        self.compose(&coef)
    }

    fn sin(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        let cycle = [s, c, -s, -c];
        let coef: Vec<f64> = (0..=self.order)
            .map(|k| cycle[k % 4] / factorial(k))
            .collect();
        self.compose(&coef)
    }

    fn cos(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        let cycle = [c, -s, -c, s];
        let coef: Vec<f64> = (0..=self.order)
            .map(|k| cycle[k % 4] / factorial(k))
            .collect();
        self.compose(&coef)
    }

    fn sqrt(self) -> Self {
        self.powf(0.5)
    }

    fn abs(self) -> Self {
        if self.c[0] < 0.0 {
            -self
        } else {
            self
        }
    }

    fn powi(self, n: i32) -> Self {
        if n < 0 {
            return Jet::constant(1.0) / self.powi(-n);
        }
        let mut acc = Jet::constant(1.0);
        let mut base = self;
        let mut e = n as u32;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }

    fn powf(self, p: f64) -> Self {
        if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
            return self.powi(p as i32);
        }
        let a = self.c[0];
        let mut coef = Vec::with_capacity(self.order + 1);
        let mut falling = 1.0;
        for k in 0..=self.order {
            coef.push(falling * a.powf(p - k as f64) / factorial(k));
            falling *= p - k as f64;
        }
        self.compose(&coef)
    }

    fn pow(self, e: Self) -> Self {
        if e.order == 0 {
            return self.powf(e.c[0]);
        }
        (e * self.ln()).exp()
    }
}
