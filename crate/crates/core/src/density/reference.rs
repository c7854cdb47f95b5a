use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::{bracket, DensityFamily};
use crate::error::{Error, Result};
use crate::geometry::{collar_chart, collar_coordinate, BoundarySide, Domain, DomainKind, Point};
use crate::quadrature::{geomspace, linspace, quad, QuadOptions};

/// Profile of a reference density in the collar coordinate.
#[derive(Clone)]
enum Profile {
    /// Piecewise linear through the node values, except on the first cell
    /// where the minimum is evaluated directly.
    Table {
        values: Vec<f64>,
        head: Arc<Head>,
    },
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

/// Data for `(1 − δ) min(φ(t), ψ_1)` on `[0, nodes[1]]`, where no linear
/// interpolant stays below a density vanishing at the boundary.
struct Head {
    fam: DensityFamily,
    xs: Vec<f64>,
    as_: Vec<f64>,
    scale: f64,
    cap: f64,
}

impl Head {
    fn value(&self, domain: &Domain, side: BoundarySide, t: f64) -> f64 {
        let mut lo = self.cap;
        for &a in &self.as_ {
            let Ok(p) = collar_chart(domain, side, a, t) else {
                return f64::NAN;
            };
            for &x in &self.xs {
                lo = lo.min(self.fam.eval(x, p).unwrap_or(f64::NAN));
            }
        }
        self.scale * lo
    }
}

/// A density `f` depending only on the collar coordinate `t`, strictly
/// below every member of a family away from the boundary and of total mass
/// below one.
#[derive(Clone)]
pub struct ReferenceDensity {
    domain: Domain,
    side: BoundarySide,
    delta: f64,
    nodes: Vec<f64>,
    profile: Profile,
    /// `∫_0^{nodes[i]} f dt`.
    cum: Vec<f64>,
}

impl fmt::Debug for ReferenceDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReferenceDensity")
            .field("side", &self.side)
            .field("delta", &self.delta)
            .field("nodes", &self.nodes.len())
            .field("total_mass", &self.total_mass())
            .finish()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceOptions {
    pub side: BoundarySide,
    /// Equispaced parameter samples the minimum is taken over.
    pub n_x: usize,
    /// Additional parameter samples.
    pub extra_x: Vec<f64>,
    /// Samples of the boundary coordinate (cylinder only).
    pub n_a: usize,
    pub t_min: f64,
    pub n_geometric: usize,
    pub n_linear: usize,
    /// Rounds of node refinement when the domination check fails.
    pub max_refine: usize,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        ReferenceOptions {
            side: BoundarySide::Lower,
            n_x: 33,
            extra_x: Vec::new(),
            n_a: 16,
            t_min: 1e-8,
            n_geometric: 160,
            n_linear: 400,
            max_refine: 4,
        }
    }
}

/// Infimum values below this are treated as floating-point underflow.
pub const UNDERFLOW: f64 = 1e-200;

/// Default node set: 0, geometric nodes up to `1e-2`, then uniform to 1.
fn default_nodes(opts: &ReferenceOptions) -> Vec<f64> {
    let mut nodes = vec![0.0];
    nodes.extend(geomspace(opts.t_min, 1e-2, opts.n_geometric));
    nodes.extend(linspace(1e-2, 1.0, opts.n_linear).into_iter().skip(1));
    nodes
}

/// Reference density `f = (1 − δ) · min_{s ≥ t} min_{x, a} ρ(x, Q(a, s))`
/// sampled on the default nodes and interpolated linearly.
pub fn make_reference(fam: &DensityFamily, delta: f64) -> Result<ReferenceDensity> {
    make_reference_with(fam, delta, &ReferenceOptions::default())
}

pub fn make_reference_with(
    fam: &DensityFamily,
    delta: f64,
    opts: &ReferenceOptions,
) -> Result<ReferenceDensity> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParam(format!(
            "reference margin δ must lie in (0, 1), got {delta}"
        )));
    }
    let domain = *fam.domain();
    if domain.kind() == DomainKind::Torus {
        return Err(Error::NoCollar);
    }
    let mut xs = fam.params().samples(opts.n_x.max(2));
    xs.extend(
        opts.extra_x
            .iter()
            .copied()
            .filter(|x| fam.params().contains(*x)),
    );
    let as_: Vec<f64> = match domain.kind() {
        DomainKind::Cylinder => (0..opts.n_a.max(1))
            .map(|i| domain.circumference() * i as f64 / opts.n_a.max(1) as f64)
            .collect(),
        _ => vec![0.0],
    };
    let side = opts.side;
    let phi = |t: f64| -> Result<f64> {
        let mut lo = f64::INFINITY;
        for &a in &as_ {
            let p = collar_chart(&domain, side, a, t)?;
            for &x in &xs {
                lo = lo.min(fam.eval(x, p)?);
            }
        }
        Ok(lo)
    };

    let mut nodes = default_nodes(opts);
    let mut phis: Vec<f64> = nodes.par_iter().map(|&t| phi(t)).collect::<Result<_>>()?;
    // Families such as e^{-1/t} are exactly zero in floating point next to
    // the boundary; the table then starts where the infimum is representable
    // and the head cell covers the rest.
    if let Some(first) = phis.iter().skip(1).position(|&p| p > UNDERFLOW) {
        if first > 0 && first + 1 < nodes.len() {
            nodes.drain(1..first + 1);
            phis.drain(1..first + 1);
        }
    }
    for round in 0..=opts.max_refine {
        let values = scaled_suffix_min(&phis, 1.0 - delta);
        if let Some((_, &t)) = values.iter().zip(&nodes).skip(1).find(|(v, _)| **v <= 0.0) {
            return Err(Error::Degenerate(format!(
                "family `{}` is not bounded away from zero at collar coordinate t = {t}",
                fam.name()
            )));
        }
        // Domination at cell midpoints.
        let mids: Vec<(usize, f64)> = nodes
            .windows(2)
            .enumerate()
            .skip(1)
            .map(|(i, w)| (i, 0.5 * (w[0] + w[1])))
            .collect();
        let mid_phi: Vec<f64> = mids
            .par_iter()
            .map(|&(_, t)| phi(t))
            .collect::<Result<_>>()?;
        let bad: Vec<usize> = mids
            .iter()
            .zip(&mid_phi)
            .filter(|((i, _), ph)| {
                let f_mid = 0.5 * (values[*i] + values[*i + 1]);
                f_mid >= **ph && f_mid > 0.0
            })
            .map(|((i, _), _)| *i)
            .collect();
        if bad.is_empty() {
            let head = Arc::new(Head {
                fam: fam.clone(),
                xs,
                as_,
                scale: 1.0 - delta,
                cap: phis[1..].iter().copied().fold(f64::INFINITY, f64::min),
            });
            let first = quad(
                |t| head.value(&domain, side, t),
                0.0,
                nodes[1],
                QuadOptions::with_tol(0.0, 1e-12),
            )?;
            let mut cum = table_cumulative(&nodes, &values);
            let shift = first - cum[1];
            for c in cum.iter_mut().skip(1) {
                *c += shift;
            }
            return Ok(ReferenceDensity {
                domain,
                side,
                delta,
                nodes,
                profile: Profile::Table { values, head },
                cum,
            });
        }
        if round == opts.max_refine {
            let t = mids[bad[0] - 1].1;
            return Err(Error::Degenerate(format!(
                "reference density could not be kept below the family near t = {t}"
            )));
        }
        // Insert the offending midpoints and resample.
        let mut ins: Vec<(usize, f64, f64)> = bad
            .iter()
            .map(|&i| (i, mids[i - 1].1, mid_phi[i - 1]))
            .collect();
        ins.reverse();
        for (i, t, ph) in ins {
            nodes.insert(i + 1, t);
            phis.insert(i + 1, ph);
        }
    }
    unreachable!()
}

fn scaled_suffix_min(phis: &[f64], scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; phis.len()];
    let mut run = f64::INFINITY;
    for i in (0..phis.len()).rev() {
        run = run.min(phis[i]);
        out[i] = scale * run;
    }
    out
}

fn table_cumulative(nodes: &[f64], values: &[f64]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(nodes.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for i in 1..nodes.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (nodes[i] - nodes[i - 1]);
        cum.push(acc);
    }
    cum
}

impl ReferenceDensity {
    /// Reference density given by an explicit profile `t ↦ f(t)`.
    pub fn from_profile(
        domain: Domain,
        side: BoundarySide,
        profile: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    ) -> Result<Self> {
        if domain.kind() == DomainKind::Torus {
            return Err(Error::NoCollar);
        }
        let nodes = default_nodes(&ReferenceOptions::default());
        let opts = QuadOptions::with_tol(1e-16, 1e-13);
        let mut cum = vec![0.0];
        let mut acc = 0.0;
        for w in nodes.windows(2) {
            let v = quad(|t| profile(t), w[0], w[1], opts)?;
            if !(v >= 0.0) {
                return Err(Error::InvalidParam(
                    "reference profile must be non-negative".into(),
                ));
            }
            acc += v;
            cum.push(acc);
        }
        let r = ReferenceDensity {
            domain,
            side,
            delta: 0.0,
            nodes,
            profile: Profile::Function(profile),
            cum,
        };
        if r.total_mass() >= 1.0 {
            return Err(Error::InvalidParam(format!(
                "reference mass {} is not below one",
                r.total_mass()
            )));
        }
        Ok(r)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn side(&self) -> BoundarySide {
        self.side
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `f` at collar coordinate `t`.
    pub fn value(&self, t: f64) -> f64 {
        match &self.profile {
            Profile::Table { values, head } => {
                if t < self.nodes[1] {
                    return head.value(&self.domain, self.side, t.max(0.0));
                }
                let (i0, i1, s) = bracket(&self.nodes, t);
                (1.0 - s) * values[i0] + s * values[i1]
            }
            Profile::Function(f) => f(t),
        }
    }

    /// `f` at a point of the domain.
    pub fn at(&self, p: Point) -> f64 {
        self.value(collar_coordinate(self.side, p))
    }

    /// `∫_0^t f`, per unit length of boundary.
    pub fn mass_to(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        let k = self.nodes.partition_point(|&z| z <= t).saturating_sub(1);
        let t0 = self.nodes[k];
        let tail = match &self.profile {
            Profile::Table { .. } if k > 0 => 0.5 * (self.value(t0) + self.value(t)) * (t - t0),
            _ => quad(
                |s| self.value(s),
                t0,
                t,
                QuadOptions::with_tol(1e-300, 1e-12),
            )
            .unwrap_or(f64::NAN),
        };
        self.cum[k] + tail
    }

    /// `∫_M f`.
    pub fn total_mass(&self) -> f64 {
        let per = *self.cum.last().expect("nodes");
        match self.domain.kind() {
            DomainKind::Cylinder => per * self.domain.circumference(),
            _ => per,
        }
    }

    /// `j`-th derivative in `t` by central differences with step `h`.
    pub fn derivative_fd(&self, t: f64, j: usize, h: f64) -> f64 {
        crate::fd::central_derivative(|s| self.value(s.clamp(0.0, 1.0)), t, j, h)
    }

    /// Smallest `ρ(x, Q(a, t)) − f(t)` over the given samples.
    pub fn domination_gap(
        &self,
        fam: &DensityFamily,
        xs: &[f64],
        as_: &[f64],
        ts: &[f64],
    ) -> Result<(f64, f64, f64, f64)> {
        let mut worst = (f64::INFINITY, 0.0, 0.0, 0.0);
        for &t in ts {
            let f = self.value(t);
            for &a in as_ {
                let p = collar_chart(&self.domain, self.side, a, t)?;
                for &x in xs {
                    let gap = fam.eval(x, p)? - f;
                    if gap < worst.0 {
                        worst = (gap, x, a, t);
                    }
                }
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::builtin_family;
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    #[test]
    fn spec_examples() {
        let none = BTreeMap::new();
        let c = builtin_family("constant", &none).unwrap();
        let r = make_reference(&c, 0.5).unwrap();
        assert_relative_eq!(r.value(0.3), 0.5, epsilon = 1e-15);
        assert_relative_eq!(r.total_mass(), 0.5, epsilon = 1e-14);

        let e1 = builtin_family("example1", &none).unwrap();
        let r = make_reference(&e1, 0.5).unwrap();
        assert_relative_eq!(r.value(1.0), 1.0, epsilon = 1e-14);
        assert!(r.total_mass() < 1.0);

        let af = builtin_family("affine", &none).unwrap();
        let r = make_reference(&af, 0.5).unwrap();
        assert_relative_eq!(r.value(0.0), 0.25, epsilon = 1e-14);
    }

    #[test]
    fn dominated_and_monotone() {
        let e1 = builtin_family("example1", &BTreeMap::new()).unwrap();
        let r = make_reference(&e1, 0.25).unwrap();
        let xs = e1.params().samples(33);
        let ts: Vec<f64> = (1..200).map(|i| i as f64 / 200.0).collect();
        let (gap, ..) = r.domination_gap(&e1, &xs, &[0.0], &ts).unwrap();
        assert!(gap > 0.0);
        assert!(r.nodes().windows(2).all(|w| r.value(w[0]) <= r.value(w[1])));
    }

    #[test]
    fn degenerate_family_rejected() {
        let f = DensityFamily::parse(
            Domain::interval(),
            "1 + x*cos(2*pi*m)",
            crate::density::ParamRange::new(-1.0, 1.0).unwrap(),
            1,
        )
        .unwrap();
        assert!(matches!(make_reference(&f, 0.5), Err(Error::Degenerate(_))));
    }

    #[test]
    fn torus_has_no_reference() {
        let f = DensityFamily::constant(
            Domain::torus(),
            crate::density::ParamRange::new(0.0, 1.0).unwrap(),
            1,
        );
        assert!(matches!(make_reference(&f, 0.5), Err(Error::NoCollar)));
    }

    #[test]
    fn profile_mass() {
        let r = ReferenceDensity::from_profile(
            Domain::interval(),
            BoundarySide::Lower,
            Arc::new(|t| t),
        )
        .unwrap();
        assert_relative_eq!(r.mass_to(0.5), 0.125, epsilon = 1e-14);
        assert_relative_eq!(
            r.mass_to(0.01234),
            0.01234f64.powi(2) / 2.0,
            max_relative = 1e-12
        );
    }
}
