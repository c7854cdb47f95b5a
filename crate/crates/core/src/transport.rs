//! The composed transport `T_x = G_x ∘ F_x`, its pushforward checks, the
//! uniform `C^k` probe, random maps and conjugation by a moving family.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::collar::{build_collar_map, solve_line_mass, CollarInfo, CollarMap, CollarOptions};
use crate::density::{
    make_reference_with, DensityFamily, ParamRange, ReferenceDensity, ReferenceOptions,
};
use crate::diagnostics::{ks_statistic, QuantileFunction};
use crate::error::{Error, Result, Stage, StageExt};
use crate::fd::{central_stencil, FdStep, RichardsonPair};
use crate::geometry::{collar_coordinate, BoundarySide, Domain, DomainKind, Grid, Point};
use crate::moser::{MoserInfo, MoserMap, MoserOptions};
use crate::quadrature::{geomspace, linspace, quad, QuadOptions};

/// Which stages make up the transport.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Collar plus Moser when the family degenerates at a boundary, Moser
    /// from the uniform measure otherwise.
    Auto,
    CollarMoser,
    MoserOnly,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Mode::Auto),
            "collar-moser" | "collar" => Ok(Mode::CollarMoser),
            "moser-only" | "moser" => Ok(Mode::MoserOnly),
            other => Err(Error::Config(format!("unknown pipeline mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineOptions {
    pub mode: Mode,
    pub side: BoundarySide,
    /// Width of the collar band `V` on which `F_x` is the identity.
    pub v: f64,
    /// Reference density is `(1 − δ)` times the boundary infimum.
    pub delta: f64,
    pub nt: usize,
    pub na: usize,
    pub moser: MoserOptions,
    pub collar: CollarOptions,
    pub reference: ReferenceOptions,
    /// Auto mode treats the family as non-degenerate when it stays above
    /// this value on the probes.
    pub floor: f64,
    pub tol_push: f64,
    /// Parameters at which the pushforward is verified; empty means
    /// `n_verify` evenly spaced samples of `X`.
    pub verify_x: Vec<f64>,
    pub n_verify: usize,
    /// Uniform cells of the one-dimensional pushforward mesh.
    pub push_cells: usize,
    /// Quasi-random samples and histogram bins per axis in two dimensions.
    pub push_samples: usize,
    pub push_bins: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            mode: Mode::Auto,
            side: BoundarySide::Lower,
            v: 0.25,
            delta: 0.5,
            nt: 1024,
            na: 64,
            moser: MoserOptions::default(),
            collar: CollarOptions::default(),
            reference: ReferenceOptions::default(),
            floor: 1e-3,
            tol_push: 1e-3,
            verify_x: Vec::new(),
            n_verify: 5,
            push_cells: 4096,
            push_samples: 1_000_000,
            push_bins: 64,
        }
    }
}

/// Pushforward check at one parameter.
#[derive(Debug, Clone, Serialize)]
pub struct Verification {
    pub x: f64,
    pub l1: f64,
    pub pass: bool,
    /// Smallest target density of the Moser stage past collar depth 1/6.
    pub nu_min: f64,
    pub t_star: Option<f64>,
    pub moser: MoserInfo,
    pub collar: Option<CollarInfo>,
    /// Monte Carlo error scale `sqrt(bins / N)`; absent in one dimension.
    pub mc_error_bar: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstructionSummary {
    pub family: String,
    pub domain: DomainKind,
    pub mode: Mode,
    pub side: BoundarySide,
    pub v: f64,
    pub delta: f64,
    pub lambda: f64,
    pub reference_mass: Option<f64>,
    pub band: (f64, f64),
    pub grid_nodes: usize,
    pub verifications: Vec<Verification>,
    pub pass: bool,
}

/// A family of maps `T_x : M → M` with `(T_x)_* μ = ρ_x`.
#[derive(Debug, Clone)]
pub struct TransportFamily {
    family: DensityFamily,
    opts: PipelineOptions,
    mode: Mode,
    reference: Option<ReferenceDensity>,
    lambda: f64,
    grid: Grid,
    source_nodal: Vec<f64>,
    summary: Option<ConstructionSummary>,
}

/// `T_x` at one parameter.
#[derive(Debug, Clone)]
pub struct TransportMap {
    pub x: f64,
    side: BoundarySide,
    v: f64,
    collar: Option<CollarMap>,
    moser: MoserMap,
    nu_min: f64,
}

fn resolve_mode(fam: &DensityFamily, opts: &PipelineOptions) -> Result<Mode> {
    let d = fam.domain();
    match opts.mode {
        Mode::CollarMoser if !d.has_boundary() => Err(Error::NoCollar),
        Mode::Auto if !d.has_boundary() => Ok(Mode::MoserOnly),
        Mode::Auto => {
            let grid = Grid::for_domain(d, 16, 257)?;
            let pts = grid.points();
            let mut lo = f64::INFINITY;
            for x in fam.params().samples(9) {
                for &p in &pts {
                    lo = lo.min(fam.eval(x, p)?);
                }
            }
            Ok(if lo >= opts.floor {
                Mode::MoserOnly
            } else {
                Mode::CollarMoser
            })
        }
        m => Ok(m),
    }
}

/// Builds the transport family and verifies its pushforward.
pub fn build_representation(
    fam: &DensityFamily,
    opts: &PipelineOptions,
) -> Result<TransportFamily> {
    let mut tf = TransportFamily::new(fam, opts)?;
    tf.verify()?;
    Ok(tf)
}

impl TransportFamily {
    /// Sets up the reference density, the source measure and the Moser
    /// grid without verifying anything.
    pub fn new(fam: &DensityFamily, opts: &PipelineOptions) -> Result<Self> {
        if !(opts.v > 1.0 / 6.0 && opts.v < 1.0 / 3.0) {
            return Err(Error::InvalidParam(format!(
                "collar band v = {} must lie in (1/6, 1/3)",
                opts.v
            )));
        }
        let mode = resolve_mode(fam, opts)?;
        let domain = *fam.domain();
        let mut opts = opts.clone();
        opts.collar.side = opts.side;
        opts.reference.side = opts.side;
        let (reference, lambda, band) = match mode {
            Mode::CollarMoser => {
                let r = make_reference_with(fam, opts.delta, &opts.reference)
                    .stage(Stage::Reference)?;
                let inner = r.mass_to(opts.v);
                let outer = r.mass_to(1.0) - inner;
                let l = domain.circumference().max(1.0);
                if !(outer > 0.0) {
                    return Err(Error::Degenerate(
                        "reference density has no mass past the collar band".into(),
                    )
                    .at(Stage::Reference));
                }
                let lambda = (1.0 - l * inner) / (l * outer);
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::Degenerate(format!("source rescaling λ = {lambda}"))
                        .at(Stage::Reference));
                }
                let band = match opts.side {
                    BoundarySide::Lower => (opts.v, 1.0),
                    BoundarySide::Upper => (0.0, 1.0 - opts.v),
                };
                (Some(r), lambda, band)
            }
            _ => (None, 1.0, (0.0, 1.0)),
        };
        let grid = Grid::for_domain_band(&domain, band.0, band.1, opts.na, opts.nt)?;
        let mut tf = TransportFamily {
            family: fam.clone(),
            opts,
            mode,
            reference,
            lambda,
            grid,
            source_nodal: Vec::new(),
            summary: None,
        };
        tf.source_nodal = tf
            .grid
            .points()
            .iter()
            .map(|&p| tf.source_density(p))
            .collect();
        Ok(tf)
    }

    pub fn family(&self) -> &DensityFamily {
        &self.family
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.opts
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn reference(&self) -> Option<&ReferenceDensity> {
        self.reference.as_ref()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn summary(&self) -> Option<&ConstructionSummary> {
        self.summary.as_ref()
    }

    /// Density of the source measure `μ`.
    pub fn source_density(&self, p: Point) -> f64 {
        match &self.reference {
            None => 1.0 / self.family.domain().volume(),
            Some(r) => {
                let t = collar_coordinate(self.opts.side, p);
                let f = r.value(t.clamp(0.0, 1.0));
                if t < self.opts.v {
                    f
                } else {
                    self.lambda * f
                }
            }
        }
    }

    /// `μ` of the axial slab below `m` (interval: the CDF of `μ`).
    pub fn source_cdf(&self, m: f64) -> f64 {
        let m = m.clamp(0.0, 1.0);
        let l = self.family.domain().circumference().max(1.0);
        match &self.reference {
            None => m,
            Some(r) => {
                let collar_mass = |t: f64| {
                    let v = self.opts.v;
                    if t <= v {
                        r.mass_to(t)
                    } else {
                        r.mass_to(v) + self.lambda * (r.mass_to(t) - r.mass_to(v))
                    }
                };
                match self.opts.side {
                    BoundarySide::Lower => l * collar_mass(m),
                    BoundarySide::Upper => 1.0 - l * collar_mass(1.0 - m),
                }
            }
        }
    }

    /// Builds `T_x`.
    pub fn map_at(&self, x: f64) -> Result<TransportMap> {
        if !self.family.params().contains(x) {
            return Err(Error::OutOfDomain(format!(
                "parameter {x} outside the family range"
            )));
        }
        let pts = self.grid.points();
        let side = self.opts.side;
        let (collar, target) = match &self.reference {
            Some(r) => {
                let cm = build_collar_map(
                    &self.family,
                    r,
                    x,
                    self.family.order(),
                    self.opts.v,
                    &self.opts.collar,
                )
                .stage(Stage::Collar)?;
                let target: Vec<f64> = pts
                    .par_iter()
                    .map(|&p| {
                        let t = collar_coordinate(side, p);
                        if t < 2.0 / 3.0 {
                            cm.pushed_density(&self.family, p.a, t)
                        } else {
                            self.family.eval(x, p)
                        }
                    })
                    .collect::<Result<_>>()
                    .stage(Stage::Collar)?;
                (Some(cm), target)
            }
            None => {
                let target: Vec<f64> = pts
                    .par_iter()
                    .map(|&p| self.family.eval(x, p))
                    .collect::<Result<_>>()
                    .stage(Stage::Moser)?;
                (None, target)
            }
        };
        let nu_min = pts
            .iter()
            .zip(&target)
            .filter(|(p, _)| collar.is_none() || collar_coordinate(side, **p) >= 1.0 / 6.0)
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min);
        let floor = target
            .iter()
            .chain(&self.source_nodal)
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !(floor > self.opts.moser.min_density) {
            return Err(Error::Degenerate(format!(
                "Moser densities are not bounded below (minimum {floor:e})"
            ))
            .at(Stage::Moser));
        }
        let mut mopts = self.opts.moser;
        mopts.min_density = 0.9 * floor;
        let moser = MoserMap::from_nodal(&self.grid, &self.source_nodal, &target, &mopts)
            .stage(Stage::Moser)?;
        Ok(TransportMap {
            x,
            side,
            v: self.opts.v,
            collar,
            moser,
            nu_min,
        })
    }

    fn verify_params(&self) -> Vec<f64> {
        if self.opts.verify_x.is_empty() {
            self.family.params().samples(self.opts.n_verify.max(1))
        } else {
            self.opts.verify_x.clone()
        }
    }

    /// `L¹` distance between `(T_x)_* μ` and `ρ_x`.
    pub fn pushforward_l1(&self, map: &TransportMap) -> Result<(f64, Option<f64>)> {
        let x = map.x;
        match self.family.domain().kind() {
            DomainKind::Interval => {
                let mesh = pushforward_mesh(self.opts.push_cells, self.opts.v, self.opts.side);
                let pf = pushforward_density(
                    &|m| Ok(map.eval(Point::on_line(m))?.t),
                    &|m| self.source_density(Point::on_line(m)),
                    &mesh,
                )?;
                Ok((pf.l1_against(|y| self.family.eval_line(x, y))?, None))
            }
            _ => {
                let h = pushforward_2d(
                    &|p| map.eval(p),
                    &|p| self.source_density(p),
                    self.family.domain(),
                    self.opts.push_samples,
                    self.opts.push_bins,
                )?;
                let l1 = h.l1_against(|p| self.family.eval(x, p))?;
                Ok((l1, Some(h.mc_error_bar)))
            }
        }
    }

    /// Checks the pushforward at the verification parameters and stores
    /// the summary.
    pub fn verify(&mut self) -> Result<&ConstructionSummary> {
        let mut records = Vec::new();
        for x in self.verify_params() {
            let map = self.map_at(x)?;
            let (l1, bar) = self.pushforward_l1(&map).stage(Stage::Verify)?;
            records.push(Verification {
                x,
                l1,
                pass: l1 <= self.opts.tol_push,
                nu_min: map.nu_min,
                t_star: map.collar.as_ref().map(|c| c.info.t_star),
                moser: map.moser.info().clone(),
                collar: map.collar.as_ref().map(|c| c.info.clone()),
                mc_error_bar: bar,
            });
        }
        let band = match self.grid.t {
            crate::geometry::Axis::Bounded { lo, hi, .. } => (lo, hi),
            _ => (0.0, 1.0),
        };
        self.summary = Some(ConstructionSummary {
            family: self.family.name().to_string(),
            domain: self.family.domain().kind(),
            mode: self.mode,
            side: self.opts.side,
            v: self.opts.v,
            delta: self.opts.delta,
            lambda: self.lambda,
            reference_mass: self.reference.as_ref().map(|r| r.total_mass()),
            band,
            grid_nodes: self.grid.len(),
            pass: records.iter().all(|r| r.pass),
            verifications: records,
        });
        Ok(self.summary.as_ref().expect("just set"))
    }
}

impl TransportMap {
    pub fn collar(&self) -> Option<&CollarMap> {
        self.collar.as_ref()
    }

    pub fn moser(&self) -> &MoserMap {
        &self.moser
    }

    /// Smallest Moser target density past collar depth 1/6.
    pub fn nu_min(&self) -> f64 {
        self.nu_min
    }

    /// `T_x(p)`.
    pub fn eval(&self, p: Point) -> Result<Point> {
        match &self.collar {
            None => self.moser.eval(p).stage(Stage::Moser),
            Some(cm) => {
                let t = collar_coordinate(self.side, p);
                let q = if t < self.v {
                    p
                } else {
                    self.moser.eval(p).stage(Stage::Moser)?
                };
                cm.eval(q).stage(Stage::Compose)
            }
        }
    }

    pub fn eval_many(&self, pts: &[Point]) -> Result<Vec<Point>> {
        pts.par_iter().map(|&p| self.eval(p)).collect()
    }
}

/// Source-space mesh for the one-dimensional pushforward: uniform cells,
/// geometric refinement at both ends, and the collar band edge.
pub fn pushforward_mesh(cells: usize, v: f64, side: BoundarySide) -> Vec<f64> {
    let n = cells.max(2);
    let mut m = linspace(0.0, 1.0, n + 1);
    let h = 1.0 / n as f64;
    for g in geomspace(1e-9, h, 48) {
        m.push(g);
        m.push(1.0 - g);
    }
    m.push(match side {
        BoundarySide::Lower => v,
        BoundarySide::Upper => 1.0 - v,
    });
    m.sort_by(f64::total_cmp);
    m.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    m
}

/// Image of a source mesh with the `μ`-mass of every cell.
#[derive(Debug, Clone, Serialize)]
pub struct Pushforward1d {
    pub mesh: Vec<f64>,
    pub image: Vec<f64>,
    pub mass: Vec<f64>,
}

fn quad_err<F: Fn(f64) -> Result<f64>>(f: F, a: f64, b: f64, rel: f64) -> Result<f64> {
    let mut err = None;
    let v = quad(
        |s| match f(s) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                f64::NAN
            }
        },
        a,
        b,
        QuadOptions::with_tol(1e-300, rel),
    );
    match err {
        Some(e) => Err(e),
        None => v,
    }
}

/// Pushes `μ` (density `mu`) through an increasing map of the line, cell
/// by cell on `mesh`.
pub fn pushforward_density(
    map: &(dyn Fn(f64) -> Result<f64> + Sync),
    mu: &(dyn Fn(f64) -> f64 + Sync),
    mesh: &[f64],
) -> Result<Pushforward1d> {
    if mesh.len() < 2 || !mesh.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidParam(
            "pushforward mesh must be strictly increasing".into(),
        ));
    }
    let image: Vec<f64> = mesh.par_iter().map(|&m| map(m)).collect::<Result<_>>()?;
    if let Some(i) = image.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::NonMonotone(format!(
            "images {} and {} of {} and {}",
            image[i],
            image[i + 1],
            mesh[i],
            mesh[i + 1]
        )));
    }
    let mass: Vec<f64> = mesh
        .par_windows(2)
        .map(|w| quad_err(|s| Ok(mu(s)), w[0], w[1], 1e-10))
        .collect::<Result<_>>()?;
    Ok(Pushforward1d {
        mesh: mesh.to_vec(),
        image,
        mass,
    })
}

impl Pushforward1d {
    /// Pushed density at `y`: cell mass over image length.
    pub fn density_at(&self, y: f64) -> f64 {
        let n = self.image.len();
        if y < self.image[0] || y > self.image[n - 1] {
            return 0.0;
        }
        let k = self.image.partition_point(|&z| z <= y).clamp(1, n - 1) - 1;
        self.mass[k] / (self.image[k + 1] - self.image[k])
    }

    pub fn on_grid(&self, nodes: &[f64]) -> Vec<f64> {
        nodes.iter().map(|&y| self.density_at(y)).collect()
    }

    /// `Σ |μ(cell) − ∫_{T(cell)} ρ|` over the image cells, plus the target
    /// mass outside the image.
    pub fn l1_against<F: Fn(f64) -> Result<f64> + Sync>(&self, target: F) -> Result<f64> {
        let n = self.image.len();
        let inner: Vec<f64> = self
            .image
            .par_windows(2)
            .zip(&self.mass)
            .map(|(w, m)| Ok((quad_err(&target, w[0], w[1], 1e-10)? - m).abs()))
            .collect::<Result<_>>()?;
        let lo = if self.image[0] > 0.0 {
            quad_err(&target, 0.0, self.image[0], 1e-10)?
        } else {
            0.0
        };
        let hi = if self.image[n - 1] < 1.0 {
            quad_err(&target, self.image[n - 1], 1.0, 1e-10)?
        } else {
            0.0
        };
        Ok(inner.iter().sum::<f64>() + lo + hi)
    }
}

const R2_G: f64 = 1.324_717_957_244_746;

/// Point `i` of the additive two-dimensional R2 sequence in `[0, 1)²`.
pub fn r2_point(i: usize) -> (f64, f64) {
    let (a1, a2) = (1.0 / R2_G, 1.0 / (R2_G * R2_G));
    let k = i as f64;
    ((0.5 + k * a1).fract(), (0.5 + k * a2).fract())
}

/// Histogram with linear (cloud-in-cell) deposition on a tensor grid of
/// bin centres.
#[derive(Debug, Clone, Serialize)]
pub struct Histogram2d {
    #[serde(skip)]
    pub domain: Domain,
    pub bins: usize,
    /// Mass per bin divided by bin area, row-major in `a`.
    pub density: Vec<f64>,
    pub samples: usize,
    pub mc_error_bar: f64,
}

fn cic_axis(u: f64, bins: usize, periodic: bool) -> [(usize, f64); 2] {
    let f = u * bins as f64 - 0.5;
    let i = f.floor();
    let w = f - i;
    let i = i as i64;
    let b = bins as i64;
    let idx = |j: i64| -> usize {
        if periodic {
            j.rem_euclid(b) as usize
        } else {
            j.clamp(0, b - 1) as usize
        }
    };
    [(idx(i), 1.0 - w), (idx(i + 1), w)]
}

fn axis_units(domain: &Domain, p: Point) -> (f64, f64) {
    let d = domain.wrap(p);
    (d.a / domain.circumference(), d.t)
}

fn deposit(domain: &Domain, bins: usize, acc: &mut [f64], p: Point, w: f64) {
    let (u, s) = axis_units(domain, p);
    let ta = domain.kind() == DomainKind::Torus;
    for (ia, wa) in cic_axis(u, bins, true) {
        for (it, wt) in cic_axis(s, bins, ta) {
            acc[ia * bins + it] += w * wa * wt;
        }
    }
}

/// Pushes `μ` through `map` by weighted quasi-random sampling.
pub fn pushforward_2d(
    map: &(dyn Fn(Point) -> Result<Point> + Sync),
    mu: &(dyn Fn(Point) -> f64 + Sync),
    domain: &Domain,
    samples: usize,
    bins: usize,
) -> Result<Histogram2d> {
    if domain.dimension() != 2 {
        return Err(Error::InvalidParam(
            "two-dimensional pushforward needs a surface".into(),
        ));
    }
    if samples == 0 || bins < 2 {
        return Err(Error::InvalidParam(
            "pushforward needs samples and at least two bins".into(),
        ));
    }
    let l = domain.circumference();
    let vol = domain.volume();
    let chunk = 8192;
    let partial: Vec<Vec<f64>> = (0..samples.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; bins * bins];
            for i in c * chunk..((c + 1) * chunk).min(samples) {
                let (u, s) = r2_point(i + 1);
                let p = Point::new(u * l, s);
                let w = mu(p) * vol / samples as f64;
                deposit(domain, bins, &mut acc, map(p)?, w);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let area = vol / (bins * bins) as f64;
    let mut density = vec![0.0; bins * bins];
    for acc in &partial {
        for (d, v) in density.iter_mut().zip(acc) {
            *d += v;
        }
    }
    density.iter_mut().for_each(|d| *d /= area);
    Ok(Histogram2d {
        domain: *domain,
        bins,
        density,
        samples,
        mc_error_bar: ((bins * bins) as f64 / samples as f64).sqrt(),
    })
}

impl Histogram2d {
    /// The target deposited with the same kernel from an 8×8 lattice per
    /// bin.
    pub fn reference_of<F: Fn(Point) -> Result<f64> + Sync>(&self, target: F) -> Result<Vec<f64>> {
        let fine = 8 * self.bins;
        let l = self.domain.circumference();
        let cell = self.domain.volume() / (fine * fine) as f64;
        let rows: Vec<Vec<f64>> = (0..fine)
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![0.0; self.bins * self.bins];
                for j in 0..fine {
                    let p = Point::new(
                        (i as f64 + 0.5) / fine as f64 * l,
                        (j as f64 + 0.5) / fine as f64,
                    );
                    deposit(&self.domain, self.bins, &mut acc, p, target(p)? * cell);
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        let area = self.domain.volume() / (self.bins * self.bins) as f64;
        let mut out = vec![0.0; self.bins * self.bins];
        for r in &rows {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= area);
        Ok(out)
    }

    pub fn l1_against<F: Fn(Point) -> Result<f64> + Sync>(&self, target: F) -> Result<f64> {
        let reference = self.reference_of(target)?;
        let area = self.domain.volume() / (self.bins * self.bins) as f64;
        Ok(self
            .density
            .iter()
            .zip(&reference)
            .map(|(h, r)| (h - r).abs() * area)
            .sum())
    }
}

/// A family of maps parametrised by `x`.
pub trait ParametricMap: Sync + Send {
    fn name(&self) -> String;
    fn params(&self) -> ParamRange;
    fn domain(&self) -> Domain;
    fn eval_batch(&self, x: f64, pts: &[Point]) -> Result<Vec<Point>>;
}

impl ParametricMap for TransportFamily {
    fn name(&self) -> String {
        format!("transport[{}]", self.family.name())
    }

    fn params(&self) -> ParamRange {
        self.family.params()
    }

    fn domain(&self) -> Domain {
        *self.family.domain()
    }

    fn eval_batch(&self, x: f64, pts: &[Point]) -> Result<Vec<Point>> {
        self.map_at(x)?.eval_many(pts)
    }
}

/// Source of a [`QuantileTransport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum QuantileSource {
    Uniform,
    /// The member `ρ_{x₀}` of the family itself.
    Member(f64),
}

/// Monotone rearrangement `F_{ρ_x}^{-1} ∘ F_μ` on the interval, solved to
/// near machine precision.
#[derive(Debug, Clone)]
pub struct QuantileTransport {
    family: DensityFamily,
    source: QuantileSource,
    tol: f64,
}

impl QuantileTransport {
    pub fn new(family: &DensityFamily, source: QuantileSource) -> Result<Self> {
        if family.domain().kind() != DomainKind::Interval {
            return Err(Error::InvalidParam(
                "quantile transport needs the interval domain".into(),
            ));
        }
        if let QuantileSource::Member(x0) = source {
            if !family.params().contains(x0) {
                return Err(Error::OutOfDomain(format!("source parameter {x0}")));
            }
        }
        Ok(QuantileTransport {
            family: family.clone(),
            source,
            tol: 1e-13,
        })
    }

    fn source_cdf(&self, m: f64) -> Result<f64> {
        match self.source {
            QuantileSource::Uniform => Ok(m.clamp(0.0, 1.0)),
            QuantileSource::Member(x0) => {
                if m <= 0.0 {
                    return Ok(0.0);
                }
                quad_err(|s| self.family.eval_line(x0, s), 0.0, m.min(1.0), 1e-14)
            }
        }
    }

    pub fn eval(&self, x: f64, m: f64) -> Result<f64> {
        let target = self.source_cdf(m)?;
        if target >= 1.0 - 1e-15 {
            return Ok(1.0);
        }
        solve_line_mass(&self.family, BoundarySide::Lower, x, 0.0, target, self.tol)
    }
}

impl ParametricMap for QuantileTransport {
    fn name(&self) -> String {
        format!("quantile[{}]", self.family.name())
    }

    fn params(&self) -> ParamRange {
        self.family.params()
    }

    fn domain(&self) -> Domain {
        Domain::interval()
    }

    fn eval_batch(&self, x: f64, pts: &[Point]) -> Result<Vec<Point>> {
        pts.par_iter()
            .map(|p| Ok(Point::on_line(self.eval(x, p.t)?)))
            .collect()
    }
}

/// A family `R_x` of diffeomorphisms, possibly onto other spaces.
#[derive(Clone)]
pub struct Diffeo {
    pub name: String,
    pub map: Arc<dyn Fn(f64, Point) -> Point + Send + Sync>,
}

impl std::fmt::Debug for Diffeo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Diffeo").field("name", &self.name).finish()
    }
}

impl Diffeo {
    pub fn new(
        name: impl Into<String>,
        map: impl Fn(f64, Point) -> Point + Send + Sync + 'static,
    ) -> Self {
        Diffeo {
            name: name.into(),
            map: Arc::new(map),
        }
    }
}

/// `S_x = R_x ∘ T_x`, which pushes `μ` to `(R_x)_* ρ_x`.
#[derive(Clone)]
pub struct ConjugateFamily {
    inner: Arc<dyn ParametricMap>,
    r: Diffeo,
}

/// Composes `R` after `T`, after checking that `R_x` is injective on probes.
pub fn conjugate_family(t: Arc<dyn ParametricMap>, r: Diffeo) -> Result<ConjugateFamily> {
    let domain = t.domain();
    let probes: Vec<Point> = match domain.dimension() {
        1 => linspace(0.0, 1.0, 257)
            .into_iter()
            .map(Point::on_line)
            .collect(),
        _ => {
            let g = Grid::for_domain(&domain, 33, 33)?;
            g.points()
        }
    };
    for x in t.params().samples(5) {
        let img: Vec<Point> = probes.iter().map(|&p| (r.map)(x, p)).collect();
        if img.iter().any(|q| !(q.a.is_finite() && q.t.is_finite())) {
            return Err(Error::NonInjective(format!(
                "`{}` is not finite at x = {x}",
                r.name
            )));
        }
        if domain.dimension() == 1 {
            let inc = img.windows(2).all(|w| w[1].t > w[0].t);
            let dec = img.windows(2).all(|w| w[1].t < w[0].t);
            if !(inc || dec) {
                return Err(Error::NonInjective(format!(
                    "`{}` is not monotone at x = {x}",
                    r.name
                )));
            }
        } else {
            for i in 0..img.len() {
                for j in 0..i {
                    if (img[i].a - img[j].a).hypot(img[i].t - img[j].t) < 1e-12 {
                        return Err(Error::NonInjective(format!(
                            "`{}` identifies ({}, {}) and ({}, {}) at x = {x}",
                            r.name, probes[i].a, probes[i].t, probes[j].a, probes[j].t
                        )));
                    }
                }
            }
        }
    }
    Ok(ConjugateFamily { inner: t, r })
}

impl ParametricMap for ConjugateFamily {
    fn name(&self) -> String {
        format!("{}∘{}", self.r.name, self.inner.name())
    }

    fn params(&self) -> ParamRange {
        self.inner.params()
    }

    fn domain(&self) -> Domain {
        self.inner.domain()
    }

    fn eval_batch(&self, x: f64, pts: &[Point]) -> Result<Vec<Point>> {
        Ok(self
            .inner
            .eval_batch(x, pts)?
            .into_iter()
            .map(|p| (self.r.map)(x, p))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CkVerdict {
    #[serde(rename = "BOUNDED")]
    Bounded,
    #[serde(rename = "UNBOUNDED-SUSPECT")]
    UnboundedSuspect,
}

impl CkVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            CkVerdict::Bounded => "BOUNDED",
            CkVerdict::UnboundedSuspect => "UNBOUNDED-SUSPECT",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CkOrder {
    pub order: usize,
    pub sup: f64,
    pub x: f64,
    pub m: Point,
    pub richardson: RichardsonPair,
    pub stable: bool,
    /// Supremum over probes at distance at least `floor` from the boundary.
    pub by_floor: Vec<(f64, f64)>,
    /// Largest ratio of consecutive floor suprema.
    pub growth: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CkReport {
    pub map: String,
    pub verdict: CkVerdict,
    pub orders: Vec<CkOrder>,
    pub m_grid: Vec<Point>,
    /// `per_point[i][j-1]`: supremum over `x` of `|D_x^j T_x(m_i)|`.
    pub per_point: Vec<Vec<f64>>,
}

/// Growth per decade above which a floor sequence counts as blowing up.
pub const GROWTH_THRESHOLD: f64 = 1.5;

fn boundary_distance(domain: &Domain, p: Point) -> f64 {
    match domain.kind() {
        DomainKind::Torus => f64::INFINITY,
        _ => p.t.min(1.0 - p.t),
    }
}

fn displacement(domain: &Domain, p: Point, q: Point) -> (f64, f64) {
    let wrap = |d: f64, period: f64| d - period * (d / period).round();
    match domain.kind() {
        DomainKind::Interval => (0.0, q.t - p.t),
        DomainKind::Cylinder => (wrap(q.a - p.a, domain.circumference()), q.t - p.t),
        DomainKind::Torus => (wrap(q.a - p.a, 1.0), wrap(q.t - p.t, 1.0)),
    }
}

/// Estimates `sup_{x, m} |D_x^j T_x(m)|` for `j ≤ k` by central differences
/// with a Richardson pair at the maximiser, and flags suprema that keep
/// growing as the probes approach the boundary.
pub fn estimate_uniform_ck(
    t: &dyn ParametricMap,
    m_grid: &[Point],
    k: usize,
    x_grid: &[f64],
    step: FdStep,
) -> Result<CkReport> {
    if k == 0 || m_grid.is_empty() || x_grid.is_empty() {
        return Err(Error::InvalidParam(
            "C^k probe needs k ≥ 1, probes and parameters".into(),
        ));
    }
    let range = t.params();
    let domain = t.domain();
    // Every parameter value needed, evaluated once.
    let mut plans: Vec<(usize, f64, f64, f64)> = Vec::new(); // (order, x, centre, h)
    let mut wanted: Vec<f64> = Vec::new();
    for j in 1..=k {
        let reach = j as f64 / 2.0;
        for &x in x_grid {
            let h = step.at(x);
            if !(h > 0.0) || range.width() < 2.0 * reach * h {
                return Err(Error::InvalidParam(format!(
                    "step {h} does not fit an order-{j} stencil at x = {x}"
                )));
            }
            let c = x.clamp(range.lo + reach * h, range.hi - reach * h);
            plans.push((j, x, c, h));
            wanted.push(c);
            for hh in [h, 0.5 * h] {
                for (o, _) in central_stencil(j) {
                    wanted.push(c + o * hh);
                }
            }
        }
    }
    wanted.sort_by(f64::total_cmp);
    wanted.dedup();
    // Differences are taken relative to the centre image so that periodic
    // wrap-around does not show up as a jump.
    let images: HashMap<u64, Vec<Point>> = wanted
        .par_iter()
        .map(|&x| {
            Ok((
                x.to_bits(),
                t.eval_batch(x.clamp(range.lo, range.hi), m_grid)?,
            ))
        })
        .collect::<Result<_>>()?;
    let diff = |j: usize, c: f64, h: f64, i: usize| -> f64 {
        let b = images[&c.to_bits()][i];
        let mut acc = (0.0, 0.0);
        for (o, w) in central_stencil(j) {
            let d = displacement(&domain, b, images[&(c + o * h).to_bits()][i]);
            acc.0 += w * d.0;
            acc.1 += w * d.1;
        }
        acc.0.hypot(acc.1) / h.powi(j as i32)
    };
    let dists: Vec<f64> = m_grid
        .iter()
        .map(|&p| boundary_distance(&domain, p))
        .collect();
    let min_dist = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let mut floors = Vec::new();
    if min_dist.is_finite() {
        let mut f = 0.1;
        while f >= min_dist * (1.0 - 1e-9) && f > 1e-300 {
            floors.push(f);
            f *= 0.1;
        }
    }
    let mut per_point = vec![vec![0.0; k]; m_grid.len()];
    let mut orders = Vec::new();
    for j in 1..=k {
        let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
        for (pi, &(jj, _, c, h)) in plans.iter().enumerate() {
            if jj != j {
                continue;
            }
            for i in 0..m_grid.len() {
                let v = diff(j, c, 0.5 * h, i);
                per_point[i][j - 1] = f64::max(per_point[i][j - 1], v);
                if v > best.0 {
                    best = (v, pi, i);
                }
            }
        }
        let (_, _, c, h) = plans[best.1];
        let coarse = diff(j, c, h, best.2);
        let fine = diff(j, c, 0.5 * h, best.2);
        let scale = images[&c.to_bits()][best.2]
            .t
            .abs()
            .max(images[&c.to_bits()][best.2].a.abs())
            .max(1.0);
        let rp = RichardsonPair::new(coarse, fine, 1e-9 * scale / (0.5 * h).powi(j as i32));
        let by_floor: Vec<(f64, f64)> = floors
            .iter()
            .map(|&fl| {
                let s = per_point
                    .iter()
                    .zip(&dists)
                    .filter(|(_, &d)| d >= fl * (1.0 - 1e-9))
                    .map(|(r, _)| r[j - 1])
                    .fold(0.0, f64::max);
                (fl, s)
            })
            .collect();
        let growth = by_floor
            .windows(2)
            .map(|w| {
                if w[0].1 > 0.0 {
                    w[1].1 / w[0].1
                } else if w[1].1 > 0.0 {
                    f64::INFINITY
                } else {
                    1.0
                }
            })
            .fold(1.0, f64::max);
        orders.push(CkOrder {
            order: j,
            sup: best.0,
            x: plans[best.1].1,
            m: m_grid[best.2],
            stable: rp.stable,
            richardson: rp,
            by_floor,
            growth,
        });
    }
    let bounded = orders
        .iter()
        .all(|o| o.stable && o.sup.is_finite() && o.growth < GROWTH_THRESHOLD);
    Ok(CkReport {
        map: t.name(),
        verdict: if bounded {
            CkVerdict::Bounded
        } else {
            CkVerdict::UnboundedSuspect
        },
        orders,
        m_grid: m_grid.to_vec(),
        per_point,
    })
}

/// Log-refined probe set of the interval: uniform interior points plus
/// geometric points toward both ends down to `floor`.
pub fn log_refined_line(n_uniform: usize, floor: f64, per_decade: usize) -> Vec<Point> {
    let mut m = linspace(0.0, 1.0, n_uniform.max(2) + 2);
    m.pop();
    m.remove(0);
    let decades = (0.1f64 / floor).log10().max(0.0);
    let n = (decades * per_decade as f64).round() as usize + 1;
    for g in geomspace(floor, 0.1, n.max(2)) {
        m.push(g);
        m.push(1.0 - g);
    }
    m.sort_by(f64::total_cmp);
    m.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    m.into_iter().map(Point::on_line).collect()
}

/// One draw `ω ~ μ`; the random map is `x ↦ T_x(ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RandomMapSample {
    pub index: usize,
    pub omega: Point,
}

impl RandomMapSample {
    pub fn at(&self, map: &TransportMap) -> Result<Point> {
        map.eval(self.omega)
    }
}

/// Draws `count` independent points from `μ`. Sample `i` uses its own
/// ChaCha8 stream, so the draws do not depend on thread count.
pub fn sample_random_maps(
    tf: &TransportFamily,
    count: usize,
    seed: u64,
) -> Result<Vec<RandomMapSample>> {
    let domain = *tf.family().domain();
    match domain.dimension() {
        1 => (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let u: f64 = rng.random();
                Ok(RandomMapSample {
                    index: i,
                    omega: Point::on_line(invert_cdf(|m| tf.source_cdf(m), u)),
                })
            })
            .collect(),
        _ => {
            let g = Grid::for_domain(&domain, 256, 257)?;
            let bound = 1.01
                * g.points()
                    .iter()
                    .map(|&p| tf.source_density(p))
                    .fold(0.0, f64::max);
            let efficiency = 1.0 / (bound * domain.volume());
            if !(efficiency >= 0.01) {
                return Err(Error::Sampling(format!(
                    "rejection efficiency {efficiency:.2e} is below 1%"
                )));
            }
            let l = domain.circumference();
            let limit = (1000.0 / efficiency) as usize;
            (0..count)
                .into_par_iter()
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i as u64);
                    for _ in 0..limit {
                        let p = Point::new(rng.random::<f64>() * l, rng.random::<f64>());
                        if rng.random::<f64>() * bound <= tf.source_density(p) {
                            return Ok(RandomMapSample { index: i, omega: p });
                        }
                    }
                    Err(Error::Sampling(format!(
                        "sample {i} was rejected {limit} times"
                    )))
                })
                .collect()
        }
    }
}

fn invert_cdf(cdf: impl Fn(f64) -> f64, u: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// KS distance between `T_x(ω_i)` and `ρ_x` (interval only).
pub fn random_map_ks(tf: &TransportFamily, samples: &[RandomMapSample], x: f64) -> Result<f64> {
    if tf.family().domain().kind() != DomainKind::Interval {
        return Err(Error::InvalidParam(
            "KS check needs the interval domain".into(),
        ));
    }
    let map = tf.map_at(x)?;
    let ys: Vec<f64> = samples
        .par_iter()
        .map(|s| Ok(s.at(&map)?.t))
        .collect::<Result<_>>()?;
    let q = QuantileFunction::of_family(tf.family(), x, 1 << 16)?;
    Ok(ks_statistic(&ys, |y| q.cdf(y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::builtin_family;
    use std::collections::BTreeMap;

    fn affine() -> DensityFamily {
        builtin_family("affine", &BTreeMap::new()).unwrap()
    }

    #[test]
    fn constant_family_is_identity() {
        let fam = builtin_family("constant", &BTreeMap::new()).unwrap();
        let tf = TransportFamily::new(&fam, &PipelineOptions::default()).unwrap();
        assert_eq!(tf.mode(), Mode::MoserOnly);
        let map = tf.map_at(0.3).unwrap();
        for m in [0.0, 0.1, 0.5, 0.99, 1.0] {
            assert!((map.eval(Point::on_line(m)).unwrap().t - m).abs() <= 1e-12);
        }
    }

    #[test]
    fn affine_matches_quantile_oracle() {
        let fam = affine();
        let tf = TransportFamily::new(&fam, &PipelineOptions::default()).unwrap();
        let q = QuantileTransport::new(&fam, QuantileSource::Uniform).unwrap();
        let map = tf.map_at(0.5).unwrap();
        for m in linspace(0.0, 1.0, 41) {
            let a = map.eval(Point::on_line(m)).unwrap().t;
            assert!((a - q.eval(0.5, m).unwrap()).abs() < 2e-4);
        }
        let half = map.eval(Point::on_line(0.5)).unwrap().t;
        assert!((half - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-4);
    }

    #[test]
    fn r2_sequence_start() {
        let (u, v) = r2_point(1);
        assert!((u - (0.5 + 1.0 / R2_G).fract()).abs() < 1e-15);
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn cic_identity_is_accurate() {
        let d = Domain::cylinder(1.0).unwrap();
        let h = pushforward_2d(&|p| Ok(p), &|_| 1.0, &d, 200_000, 32).unwrap();
        assert!(h.l1_against(|_| Ok(1.0)).unwrap() < 5e-3);
    }

    #[test]
    fn non_injective_conjugation_rejected() {
        let fam = affine();
        let q: Arc<dyn ParametricMap> =
            Arc::new(QuantileTransport::new(&fam, QuantileSource::Uniform).unwrap());
        let r = Diffeo::new("fold", |_, p: Point| Point::on_line(p.t * p.t - p.t));
        assert!(matches!(
            conjugate_family(q, r),
            Err(Error::NonInjective(_))
        ));
    }

    #[test]
    fn random_draws_follow_the_source() {
        let fam = affine();
        let tf = TransportFamily::new(&fam, &PipelineOptions::default()).unwrap();
        let s = sample_random_maps(&tf, 2000, 7).unwrap();
        let again = sample_random_maps(&tf, 2000, 7).unwrap();
        assert_eq!(s, again);
        let ks = ks_statistic(&s.iter().map(|r| r.omega.t).collect::<Vec<_>>(), |m| m);
        assert!(ks < 0.05);
    }
}
