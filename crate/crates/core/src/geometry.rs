//! Model domains, tensor grids and the collar parametrisation.
//!
//! Points are stored as `(a, t)` pairs. On the interval the `a` slot is
//! unused and `t` is the interval coordinate; on the cylinder `a` runs around
//! the circle of circumference `L` and `t ∈ [0, 1]` is the axial coordinate;
//! on the torus both coordinates are periodic with period 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Interval,
    Cylinder,
    Torus,
}

impl std::str::FromStr for DomainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interval" => Ok(DomainKind::Interval),
            "cylinder" => Ok(DomainKind::Cylinder),
            "torus" => Ok(DomainKind::Torus),
            other => Err(Error::Config(format!("unsupported domain kind `{other}`"))),
        }
    }
}

/// Boundary component a collar is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundarySide {
    /// The component at `t = 0`.
    Lower,
    /// The component at `t = 1`.
    Upper,
}

impl std::str::FromStr for BoundarySide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lower" => Ok(BoundarySide::Lower),
            "upper" => Ok(BoundarySide::Upper),
            other => Err(Error::Config(format!("unknown boundary side `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub a: f64,
    pub t: f64,
}

impl Point {
    pub const fn new(a: f64, t: f64) -> Self {
        Point { a, t }
    }

    /// A point of the interval.
    pub const fn on_line(m: f64) -> Self {
        Point { a: 0.0, t: m }
    }
}

/// Descriptor accepted by [`make_domain`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub circumference: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Domain {
    kind: DomainKind,
    circumference: f64,
}

impl Domain {
    pub const fn interval() -> Self {
        Domain {
            kind: DomainKind::Interval,
            circumference: 0.0,
        }
    }

    pub fn cylinder(circumference: f64) -> Result<Self> {
        if !(circumference > 0.0 && circumference.is_finite()) {
            return Err(Error::Config(format!(
                "cylinder circumference must be positive, got {circumference}"
            )));
        }
        Ok(Domain {
            kind: DomainKind::Cylinder,
            circumference,
        })
    }

    pub const fn torus() -> Self {
        Domain {
            kind: DomainKind::Torus,
            circumference: 1.0,
        }
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    /// Period of the `a` coordinate; zero on the interval.
    pub fn circumference(&self) -> f64 {
        self.circumference
    }

    pub fn dimension(&self) -> usize {
        match self.kind {
            DomainKind::Interval => 1,
            _ => 2,
        }
    }

    pub fn has_boundary(&self) -> bool {
        self.kind != DomainKind::Torus
    }

    pub fn boundary_components(&self) -> &'static [BoundarySide] {
        match self.kind {
            DomainKind::Torus => &[],
            _ => &[BoundarySide::Lower, BoundarySide::Upper],
        }
    }

    /// Total volume with the flat metric.
    pub fn volume(&self) -> f64 {
        match self.kind {
            DomainKind::Interval => 1.0,
            DomainKind::Cylinder => self.circumference,
            DomainKind::Torus => 1.0,
        }
    }

    pub fn is_on_boundary(&self, p: Point, tol: f64) -> bool {
        self.has_boundary() && (p.t.abs() <= tol || (p.t - 1.0).abs() <= tol)
    }

    /// Reduces periodic coordinates into their fundamental interval.
    pub fn wrap(&self, p: Point) -> Point {
        match self.kind {
            DomainKind::Interval => Point::new(0.0, p.t),
            DomainKind::Cylinder => Point::new(p.a.rem_euclid(self.circumference), p.t),
            DomainKind::Torus => Point::new(p.a.rem_euclid(1.0), p.t.rem_euclid(1.0)),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        match self.kind {
            DomainKind::Torus => p.a.is_finite() && p.t.is_finite(),
            _ => p.a.is_finite() && (0.0..=1.0).contains(&p.t),
        }
    }

    /// Distance between two points in the flat metric.
    pub fn distance(&self, p: Point, q: Point) -> f64 {
        let periodic = |d: f64, period: f64| {
            let d = d.rem_euclid(period);
            d.min(period - d)
        };
        match self.kind {
            DomainKind::Interval => (p.t - q.t).abs(),
            DomainKind::Cylinder => periodic(p.a - q.a, self.circumference).hypot(p.t - q.t),
            DomainKind::Torus => periodic(p.a - q.a, 1.0).hypot(periodic(p.t - q.t, 1.0)),
        }
    }
}

pub fn make_domain(spec: &DomainSpec) -> Result<Domain> {
    match spec.kind {
        DomainKind::Interval => Ok(Domain::interval()),
        DomainKind::Cylinder => Domain::cylinder(spec.circumference.unwrap_or(1.0)),
        DomainKind::Torus => Ok(Domain::torus()),
    }
}

fn check_collar_args(d: &Domain, a: f64, t: f64) -> Result<()> {
    if !d.has_boundary() {
        return Err(Error::NoCollar);
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfDomain(format!("collar coordinate t = {t}")));
    }
    if d.kind == DomainKind::Cylinder && !a.is_finite() {
        return Err(Error::OutOfDomain(format!("boundary coordinate a = {a}")));
    }
    Ok(())
}

/// Collar parametrisation `Q(a, t)` attached to the given boundary component.
pub fn collar_chart(d: &Domain, side: BoundarySide, a: f64, t: f64) -> Result<Point> {
    check_collar_args(d, a, t)?;
    let axial = match side {
        BoundarySide::Lower => t,
        BoundarySide::Upper => 1.0 - t,
    };
    Ok(match d.kind {
        DomainKind::Interval => Point::on_line(axial),
        _ => Point::new(a.rem_euclid(d.circumference), axial),
    })
}

/// Inverse of [`collar_chart`]: the collar coordinate of `p`.
pub fn collar_coordinate(side: BoundarySide, p: Point) -> f64 {
    match side {
        BoundarySide::Lower => p.t,
        BoundarySide::Upper => 1.0 - p.t,
    }
}

/// Jacobian of the collar chart. All supported collars are flat.
pub fn collar_jacobian(d: &Domain, _side: BoundarySide, a: f64, t: f64) -> Result<f64> {
    check_collar_args(d, a, t)?;
    Ok(1.0)
}

/// One axis of a tensor grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Axis {
    /// Node-centred grid on `[lo, hi]` including both endpoints.
    Bounded { lo: f64, hi: f64, n: usize },
    /// `n` nodes on a circle of length `period`.
    Periodic { period: f64, n: usize },
    /// Degenerate axis with one node, used for 1D problems.
    Single,
}

impl Axis {
    pub fn bounded(lo: f64, hi: f64, n: usize) -> Result<Axis> {
        if n < 2 || !(hi > lo) {
            return Err(Error::Config(format!(
                "bounded axis needs n >= 2 and hi > lo (got n={n}, [{lo}, {hi}])"
            )));
        }
        Ok(Axis::Bounded { lo, hi, n })
    }

    pub fn periodic(period: f64, n: usize) -> Result<Axis> {
        if n < 3 || !(period > 0.0) {
            return Err(Error::Config(format!(
                "periodic axis needs n >= 3 and positive period (got n={n}, period={period})"
            )));
        }
        Ok(Axis::Periodic { period, n })
    }

    pub fn len(&self) -> usize {
        match *self {
            Axis::Bounded { n, .. } | Axis::Periodic { n, .. } => n,
            Axis::Single => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        match *self {
            Axis::Bounded { lo, hi, n } => (hi - lo) / (n - 1) as f64,
            Axis::Periodic { period, n } => period / n as f64,
            Axis::Single => 0.0,
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        match *self {
            Axis::Bounded { lo, hi, n } => {
                if i + 1 == n {
                    hi
                } else {
                    lo + i as f64 * self.spacing()
                }
            }
            Axis::Periodic { .. } => i as f64 * self.spacing(),
            Axis::Single => 0.0,
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.coord(i)).collect()
    }

    pub fn is_boundary_node(&self, i: usize) -> bool {
        match *self {
            Axis::Bounded { n, .. } => i == 0 || i + 1 == n,
            _ => false,
        }
    }

    /// Trapezoid weight of node `i` (in units of the spacing).
    pub fn weight(&self, i: usize) -> f64 {
        match self {
            Axis::Bounded { .. } if self.is_boundary_node(i) => 0.5,
            Axis::Single => 1.0,
            _ => 1.0,
        }
    }

    /// Length of the axis (1 for a degenerate axis, so volumes stay 1D).
    pub fn extent(&self) -> f64 {
        match *self {
            Axis::Bounded { lo, hi, .. } => hi - lo,
            Axis::Periodic { period, .. } => period,
            Axis::Single => 1.0,
        }
    }

    /// Locates `c` in the axis: returns the lower node index and the
    /// fractional offset in `[0, 1]`. Bounded axes clamp, periodic axes wrap.
    pub fn locate(&self, c: f64) -> (usize, usize, f64) {
        match *self {
            Axis::Bounded { lo, n, .. } => {
                let h = self.spacing();
                let s = ((c - lo) / h).clamp(0.0, (n - 1) as f64);
                let i = (s.floor() as usize).min(n - 2);
                (i, i + 1, s - i as f64)
            }
            Axis::Periodic { period, n } => {
                let h = self.spacing();
                let s = c.rem_euclid(period) / h;
                let i = (s.floor() as usize) % n;
                let frac = (s - s.floor()).clamp(0.0, 1.0);
                (i, (i + 1) % n, frac)
            }
            Axis::Single => (0, 0, 0.0),
        }
    }
}

/// Tensor grid over `(a, t)`. Node `(i, j)` is stored at `i * t.len() + j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub a: Axis,
    pub t: Axis,
}

impl Grid {
    /// Grid covering the whole domain. `na` is ignored on the interval.
    pub fn for_domain(d: &Domain, na: usize, nt: usize) -> Result<Grid> {
        Self::for_domain_band(d, 0.0, 1.0, na, nt)
    }

    /// Grid on the band `lo <= t <= hi` of a bounded domain (the whole torus
    /// otherwise).
    pub fn for_domain_band(d: &Domain, lo: f64, hi: f64, na: usize, nt: usize) -> Result<Grid> {
        let g = match d.kind() {
            DomainKind::Interval => Grid {
                a: Axis::Single,
                t: Axis::bounded(lo, hi, nt)?,
            },
            DomainKind::Cylinder => Grid {
                a: Axis::periodic(d.circumference(), na)?,
                t: Axis::bounded(lo, hi, nt)?,
            },
            DomainKind::Torus => Grid {
                a: Axis::periodic(1.0, na)?,
                t: Axis::periodic(1.0, nt)?,
            },
        };
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.a.len() * self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.t.len() + j
    }

    pub fn point(&self, idx: usize) -> Point {
        let nt = self.t.len();
        Point::new(self.a.coord(idx / nt), self.t.coord(idx % nt))
    }

    pub fn points(&self) -> Vec<Point> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    /// Whether the node sits on a bounded end of the `t` axis.
    pub fn is_boundary(&self, idx: usize) -> bool {
        self.t.is_boundary_node(idx % self.t.len())
    }

    /// Quadrature weight (trapezoid in bounded directions) of node `idx`.
    pub fn cell_weight(&self, idx: usize) -> f64 {
        let nt = self.t.len();
        let (i, j) = (idx / nt, idx % nt);
        let wa = match self.a {
            Axis::Single => 1.0,
            _ => self.a.weight(i) * self.a.spacing(),
        };
        wa * self.t.weight(j) * self.t.spacing()
    }

    pub fn volume(&self) -> f64 {
        self.a.extent() * self.t.extent()
    }

    /// Discrete integral of a nodal field.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        values
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.cell_weight(k))
            .sum()
    }

    /// Multilinear interpolation of a nodal field.
    pub fn interpolate(&self, values: &[f64], p: Point) -> f64 {
        let (j0, j1, s) = self.t.locate(p.t);
        match self.a {
            Axis::Single => values[j0] * (1.0 - s) + values[j1] * s,
            _ => {
                let (i0, i1, r) = self.a.locate(p.a);
                let v00 = values[self.index(i0, j0)];
                let v01 = values[self.index(i0, j1)];
                let v10 = values[self.index(i1, j0)];
                let v11 = values[self.index(i1, j1)];
                (1.0 - r) * ((1.0 - s) * v00 + s * v01) + r * ((1.0 - s) * v10 + s * v11)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_boundaries() {
        assert_eq!(Domain::interval().boundary_components().len(), 2);
        let cyl = make_domain(&DomainSpec {
            kind: DomainKind::Cylinder,
            circumference: Some(1.0),
        })
        .unwrap();
        assert_eq!(cyl.boundary_components().len(), 2);
        assert!(Domain::torus().boundary_components().is_empty());
        assert!(Domain::cylinder(0.0).is_err());
        assert!("sphere".parse::<DomainKind>().is_err());
    }

    #[test]
    fn flat_collar_charts() {
        let i = Domain::interval();
        assert_eq!(
            collar_chart(&i, BoundarySide::Lower, 0.0, 0.25).unwrap().t,
            0.25
        );
        assert_eq!(
            collar_chart(&i, BoundarySide::Upper, 0.0, 0.25).unwrap().t,
            0.75
        );
        let c = Domain::cylinder(1.0).unwrap();
        assert_eq!(
            collar_chart(&c, BoundarySide::Lower, 0.5, 0.0).unwrap(),
            Point::new(0.5, 0.0)
        );
        assert_eq!(
            collar_jacobian(&i, BoundarySide::Lower, 0.0, 0.3).unwrap(),
            1.0
        );
        assert_eq!(
            collar_jacobian(&c, BoundarySide::Lower, 0.2, 0.9).unwrap(),
            1.0
        );
        assert!(matches!(
            collar_jacobian(&Domain::torus(), BoundarySide::Lower, 0.0, 0.1),
            Err(Error::NoCollar)
        ));
        assert!(collar_chart(&i, BoundarySide::Lower, 0.0, 1.5).is_err());
    }

    #[test]
    fn collar_identity_and_injective() {
        let c = Domain::cylinder(2.0).unwrap();
        let mut images = Vec::new();
        for side in [BoundarySide::Lower, BoundarySide::Upper] {
            for i in 0..16 {
                let a = i as f64 * 2.0 / 16.0;
                let p = collar_chart(&c, side, a, 0.0).unwrap();
                assert!(c.is_on_boundary(p, 0.0));
            }
        }
        for i in 0..12 {
            for j in 0..12 {
                let (a, t) = (i as f64 / 6.0, j as f64 / 24.0);
                images.push(collar_chart(&c, BoundarySide::Lower, a, t).unwrap());
            }
        }
        for (k, p) in images.iter().enumerate() {
            for q in &images[k + 1..] {
                assert!(c.distance(*p, *q) > 1e-12);
            }
        }
    }

    #[test]
    fn grid_spans_axes() {
        let g = Grid::for_domain(&Domain::cylinder(3.0).unwrap(), 32, 17).unwrap();
        assert!((g.a.spacing() * 32.0 - 3.0).abs() < 1e-14);
        assert!((g.t.spacing() * 16.0 - 1.0).abs() < 1e-14);
        assert_eq!(g.t.coord(16), 1.0);
        let ones = vec![1.0; g.len()];
        assert!((g.integrate(&ones) - 3.0).abs() < 1e-12);
        let lin: Vec<f64> = g.points().iter().map(|p| 2.0 * p.t + p.a).collect();
        let v = g.interpolate(&lin, Point::new(1.3, 0.41));
        assert!((v - (0.82 + 1.3)).abs() < 1e-12);
    }
}
