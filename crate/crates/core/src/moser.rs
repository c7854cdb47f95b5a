//! Moser's construction on a grid: a Neumann Poisson problem for the
//! potential and the flow of `V_s = ∇u / ((1 − s) ρ₀ + s ρ₁)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::density::DensityFamily;
use crate::error::{Error, Result};
use crate::geometry::{Axis, Grid, Point};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MoserOptions {
    /// Fixed RK4 steps over unit time.
    pub steps: usize,
    /// Relative residual for the Poisson solve.
    pub tol: f64,
    /// Largest acceptable discrete mass of the right-hand side.
    pub tol_norm: f64,
    /// Smallest admissible density along the interpolation.
    pub min_density: f64,
}

impl Default for MoserOptions {
    fn default() -> Self {
        MoserOptions {
            steps: 256,
            tol: 1e-10,
            tol_norm: 1e-4,
            min_density: 1e-12,
        }
    }
}

/// Solution of `−Δu = rhs` with zero normal derivative and zero mean.
#[derive(Debug, Clone, Serialize)]
pub struct PotentialField {
    #[serde(skip)]
    pub grid: Grid,
    pub values: Vec<f64>,
    /// Final relative residual `‖b − WAu‖ / ‖b‖`.
    pub residual: f64,
    pub iterations: usize,
    /// Relative residual every tenth iteration.
    pub history: Vec<f64>,
}

/// `target − source` at the nodes, checked for zero discrete mass and then
/// projected to exact zero mean.
pub fn assemble_rhs_nodal(
    grid: &Grid,
    source: &[f64],
    target: &[f64],
    tol_norm: f64,
) -> Result<Vec<f64>> {
    if source.len() != grid.len() || target.len() != grid.len() {
        return Err(Error::InvalidParam(
            "nodal fields do not match the grid".into(),
        ));
    }
    let mut rhs: Vec<f64> = target.iter().zip(source).map(|(t, s)| t - s).collect();
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam("right-hand side is not finite".into()));
    }
    let mass = grid.integrate(&rhs);
    if mass.abs() > tol_norm {
        return Err(Error::Incompatible {
            mass,
            tol: tol_norm,
        });
    }
    let mean = mass / grid.volume();
    rhs.iter_mut().for_each(|v| *v -= mean);
    Ok(rhs)
}

/// Right-hand side `ρ_x − source` on `grid`.
pub fn assemble_rhs(
    fam: &DensityFamily,
    source: &(dyn Fn(Point) -> f64 + Sync),
    x: f64,
    grid: &Grid,
    tol_norm: f64,
) -> Result<Vec<f64>> {
    let pts = grid.points();
    let target: Vec<f64> = pts
        .par_iter()
        .map(|&p| fam.eval(x, p))
        .collect::<Result<_>>()?;
    let src: Vec<f64> = pts.iter().map(|&p| source(p)).collect();
    assemble_rhs_nodal(grid, &src, &target, tol_norm)
}

fn node_weight(grid: &Grid, idx: usize) -> f64 {
    let nt = grid.t.len();
    let wa = match grid.a {
        Axis::Single => 1.0,
        a => a.weight(idx / nt),
    };
    wa * grid.t.weight(idx % nt)
}

fn axis_second_difference(axis: &Axis, u: impl Fn(usize) -> f64, i: usize) -> f64 {
    match *axis {
        Axis::Single => 0.0,
        Axis::Bounded { n, .. } => {
            let h2 = axis.spacing().powi(2);
            if i == 0 {
                2.0 * (u(0) - u(1)) / h2
            } else if i == n - 1 {
                2.0 * (u(n - 1) - u(n - 2)) / h2
            } else {
                (2.0 * u(i) - u(i - 1) - u(i + 1)) / h2
            }
        }
        Axis::Periodic { n, .. } => {
            let h2 = axis.spacing().powi(2);
            (2.0 * u(i) - u((i + n - 1) % n) - u((i + 1) % n)) / h2
        }
    }
}

/// `W · (−Δ_h) u`, symmetric positive semi-definite with kernel the
/// constants.
fn apply(grid: &Grid, u: &[f64], out: &mut [f64]) {
    let nt = grid.t.len();
    out.par_iter_mut().enumerate().for_each(|(idx, o)| {
        let (i, j) = (idx / nt, idx % nt);
        let lt = axis_second_difference(&grid.t, |jj| u[i * nt + jj], j);
        let la = axis_second_difference(&grid.a, |ii| u[ii * nt + j], i);
        *o = node_weight(grid, idx) * (lt + la);
    });
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Fixed chunking keeps the reduction order independent of thread count.
    a.par_chunks(4096)
        .zip(b.par_chunks(4096))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

fn project_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Solves `−Δu = rhs` with homogeneous Neumann (or periodic) conditions by
/// conjugate gradients on the symmetrised system; `u` has zero mean.
pub fn solve_neumann_poisson(rhs: &[f64], grid: &Grid, tol: f64) -> Result<PotentialField> {
    let n = grid.len();
    if rhs.len() != n {
        return Err(Error::InvalidParam(
            "right-hand side does not match the grid".into(),
        ));
    }
    let mut b: Vec<f64> = rhs
        .iter()
        .enumerate()
        .map(|(k, v)| node_weight(grid, k) * v)
        .collect();
    project_mean(&mut b);
    let bnorm = dot(&b, &b).sqrt();
    let mut u = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(PotentialField {
            grid: grid.clone(),
            values: u,
            residual: 0.0,
            iterations: 0,
            history: vec![],
        });
    }
    let max_iter = 20 * n + 1000;
    let window = (2 * n).max(500);
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut history = vec![1.0];
    let mut best = 1.0f64;
    let mut best_at = 0usize;
    let mut it = 0;
    let mut restarts = 0;
    loop {
        let rel = rr.sqrt() / bnorm;
        if rel <= tol {
            // Confirm with the true residual; restart once from the current
            // iterate if rounding has let the recursion drift.
            apply(grid, &u, &mut ap);
            let mut tr: Vec<f64> = b.iter().zip(&ap).map(|(x, y)| x - y).collect();
            project_mean(&mut tr);
            let true_rel = dot(&tr, &tr).sqrt() / bnorm;
            if true_rel <= tol || restarts >= 3 {
                if true_rel > tol {
                    return Err(Error::Stagnation {
                        residual: true_rel,
                        iterations: it,
                        history,
                    });
                }
                let shift = weighted_mean(grid, &u);
                u.iter_mut().for_each(|v| *v -= shift);
                return Ok(PotentialField {
                    grid: grid.clone(),
                    values: u,
                    residual: true_rel,
                    iterations: it,
                    history,
                });
            }
            restarts += 1;
            r = tr;
            p = r.clone();
            rr = dot(&r, &r);
            continue;
        }
        if it >= max_iter || it - best_at > window {
            return Err(Error::Stagnation {
                residual: rel,
                iterations: it,
                history,
            });
        }
        apply(grid, &p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Stagnation {
                residual: rel,
                iterations: it,
                history,
            });
        }
        let alpha = rr / pap;
        u.par_iter_mut()
            .zip(&p)
            .for_each(|(x, pv)| *x += alpha * pv);
        r.par_iter_mut()
            .zip(&ap)
            .for_each(|(x, av)| *x -= alpha * av);
        project_mean(&mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        p.par_iter_mut()
            .zip(&r)
            .for_each(|(pv, rv)| *pv = rv + beta * *pv);
        it += 1;
        let rel = rr.sqrt() / bnorm;
        if rel < 0.5 * best {
            best = rel;
            best_at = it;
        }
        if it % 10 == 0 {
            history.push(rel);
        }
    }
}

fn weighted_mean(grid: &Grid, u: &[f64]) -> f64 {
    grid.integrate(u) / grid.volume()
}

/// Closed-form Neumann solution on one bounded axis: `u' = −∫ rhs`,
/// integrated by the trapezoid rule and shifted to zero mean.
pub fn neumann_closed_form_1d(rhs: &[f64], axis: &Axis) -> Vec<f64> {
    let coords = axis.coords();
    let du: Vec<f64> = crate::quadrature::cumulative_trapezoid(&coords, rhs)
        .into_iter()
        .map(|v| -v)
        .collect();
    let u = crate::quadrature::cumulative_trapezoid(&coords, &du);
    let grid = Grid {
        a: Axis::Single,
        t: *axis,
    };
    let m = weighted_mean(&grid, &u);
    u.into_iter().map(|v| v - m).collect()
}

/// Gradient of the potential and the two endpoint densities; evaluates the
/// Moser velocity at any time and point.
#[derive(Debug, Clone)]
pub struct VelocityProvider {
    grid: Grid,
    /// `[∂_a u, ∂_t u, ρ₀, ρ₁]` per node, interleaved so that one cell
    /// lookup serves all four fields.
    nodes: Vec<[f64; 4]>,
}

/// Nodal snapshot of the velocity at time `s`.
#[derive(Debug, Clone, Serialize)]
pub struct VelocityField {
    pub s: f64,
    pub va: Vec<f64>,
    pub vt: Vec<f64>,
}

fn gradient(grid: &Grid, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nt = grid.t.len();
    let d = |axis: &Axis, f: &dyn Fn(usize) -> f64, i: usize| -> f64 {
        match *axis {
            Axis::Single => 0.0,
            Axis::Bounded { n, .. } => {
                if i == 0 || i == n - 1 {
                    0.0
                } else {
                    (f(i + 1) - f(i - 1)) / (2.0 * axis.spacing())
                }
            }
            Axis::Periodic { n, .. } => {
                (f((i + 1) % n) - f((i + n - 1) % n)) / (2.0 * axis.spacing())
            }
        }
    };
    let mut ga = vec![0.0; u.len()];
    let mut gt = vec![0.0; u.len()];
    for idx in 0..u.len() {
        let (i, j) = (idx / nt, idx % nt);
        gt[idx] = d(&grid.t, &|jj| u[i * nt + jj], j);
        ga[idx] = d(&grid.a, &|ii| u[ii * nt + j], i);
    }
    (ga, gt)
}

/// Velocity of the linear interpolation `(1 − s) ρ₀ + s ρ₁` driven by `u`.
pub fn velocity_field(
    u: &PotentialField,
    rho0: &[f64],
    rho1: &[f64],
    min_density: f64,
) -> Result<VelocityProvider> {
    let grid = u.grid.clone();
    if rho0.len() != grid.len() || rho1.len() != grid.len() {
        return Err(Error::InvalidParam(
            "densities do not match the grid".into(),
        ));
    }
    for (k, (a, b)) in rho0.iter().zip(rho1).enumerate() {
        if !(a.min(*b) > min_density) {
            let p = grid.point(k);
            return Err(Error::Degenerate(format!(
                "interpolated density {} is not bounded below at node ({}, {})",
                a.min(*b),
                p.a,
                p.t
            )));
        }
    }
    let (grad_a, grad_t) = gradient(&grid, &u.values);
    let nodes = (0..grid.len())
        .map(|k| [grad_a[k], grad_t[k], rho0[k], rho1[k]])
        .collect();
    Ok(VelocityProvider { grid, nodes })
}

impl VelocityProvider {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn at(&self, s: f64, p: Point) -> (f64, f64) {
        let g = &self.grid;
        let (j0, j1, w) = g.t.locate(p.t);
        let f = match g.a {
            Axis::Single => lerp4(&self.nodes[j0], &self.nodes[j1], w),
            _ => {
                let (i0, i1, r) = g.a.locate(p.a);
                let lo = lerp4(
                    &self.nodes[g.index(i0, j0)],
                    &self.nodes[g.index(i0, j1)],
                    w,
                );
                let hi = lerp4(
                    &self.nodes[g.index(i1, j0)],
                    &self.nodes[g.index(i1, j1)],
                    w,
                );
                lerp4(&lo, &hi, r)
            }
        };
        let eta = (1.0 - s) * f[2] + s * f[3];
        let va = match g.a {
            Axis::Single => 0.0,
            _ => f[0] / eta,
        };
        (va, f[1] / eta)
    }

    pub fn snapshot(&self, s: f64) -> VelocityField {
        let mut va = Vec::with_capacity(self.grid.len());
        let mut vt = Vec::with_capacity(self.grid.len());
        for n in &self.nodes {
            let eta = (1.0 - s) * n[2] + s * n[3];
            va.push(n[0] / eta);
            vt.push(n[1] / eta);
        }
        VelocityField { s, va, vt }
    }
}

fn lerp4(a: &[f64; 4], b: &[f64; 4], w: f64) -> [f64; 4] {
    std::array::from_fn(|i| (1.0 - w) * a[i] + w * b[i])
}

/// Result of following one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowResult {
    pub point: Point,
    /// Number of RK stages whose position was clamped back to the grid.
    pub clamps: usize,
}

fn constrain(grid: &Grid, p: Point, clamps: &mut usize) -> Result<Point> {
    if !(p.a.is_finite() && p.t.is_finite()) {
        return Err(Error::Integration(
            "trajectory left the finite range".into(),
        ));
    }
    let mut q = p;
    match grid.t {
        Axis::Bounded { lo, hi, .. } => {
            let h = grid.t.spacing();
            if q.t < lo - h || q.t > hi + h {
                return Err(Error::Integration(format!(
                    "trajectory escaped to t = {} outside [{lo}, {hi}]",
                    q.t
                )));
            }
            let slack = 1e-12 * (hi - lo);
            if q.t < lo - slack || q.t > hi + slack {
                *clamps += 1;
            }
            q.t = q.t.clamp(lo, hi);
        }
        Axis::Periodic { period, .. } => q.t = q.t.rem_euclid(period),
        Axis::Single => {}
    }
    if let Axis::Periodic { period, .. } = grid.a {
        q.a = q.a.rem_euclid(period);
    }
    Ok(q)
}

/// RK4 from time `s0` to `s1` (either direction) in `steps` steps.
pub fn integrate_flow_between(
    v: &VelocityProvider,
    p0: Point,
    s0: f64,
    s1: f64,
    steps: usize,
) -> Result<FlowResult> {
    if steps == 0 {
        return Err(Error::InvalidParam("flow needs at least one step".into()));
    }
    let g = &v.grid;
    let mut clamps = 0;
    let mut p = constrain(g, p0, &mut clamps)?;
    let h = (s1 - s0) / steps as f64;
    let shift = |p: Point, k: (f64, f64), c: f64| Point::new(p.a + c * k.0, p.t + c * k.1);
    for n in 0..steps {
        let s = s0 + n as f64 * h;
        let k1 = v.at(s, p);
        let p2 = constrain(g, shift(p, k1, 0.5 * h), &mut clamps)?;
        let k2 = v.at(s + 0.5 * h, p2);
        let p3 = constrain(g, shift(p, k2, 0.5 * h), &mut clamps)?;
        let k3 = v.at(s + 0.5 * h, p3);
        let p4 = constrain(g, shift(p, k3, h), &mut clamps)?;
        let k4 = v.at(s + h, p4);
        let ka = (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0) / 6.0;
        let kt = (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1) / 6.0;
        p = constrain(g, shift(p, (ka, kt), h), &mut clamps)?;
    }
    Ok(FlowResult { point: p, clamps })
}

/// The time-one flow `Φ₁(p)`.
pub fn integrate_flow(v: &VelocityProvider, p0: Point, steps: usize) -> Result<FlowResult> {
    integrate_flow_between(v, p0, 0.0, 1.0, steps)
}

/// Diagnostics of a Moser stage.
#[derive(Debug, Clone, Serialize)]
pub struct MoserInfo {
    pub nodes: usize,
    pub rhs_mass: f64,
    pub residual: f64,
    pub iterations: usize,
    pub min_density: f64,
}

/// The Moser map pushing the source onto the target on one grid.
#[derive(Debug, Clone)]
pub struct MoserMap {
    velocity: Arc<VelocityProvider>,
    potential: Arc<PotentialField>,
    steps: usize,
    info: MoserInfo,
}

impl MoserMap {
    /// Builds the map from nodal source and target densities.
    pub fn from_nodal(
        grid: &Grid,
        source: &[f64],
        target: &[f64],
        opts: &MoserOptions,
    ) -> Result<Self> {
        let rhs_mass = grid.integrate(
            &target
                .iter()
                .zip(source)
                .map(|(t, s)| t - s)
                .collect::<Vec<_>>(),
        );
        let rhs = assemble_rhs_nodal(grid, source, target, opts.tol_norm)?;
        let u = solve_neumann_poisson(&rhs, grid, opts.tol)?;
        let v = velocity_field(&u, source, target, opts.min_density)?;
        let min_density = source
            .iter()
            .chain(target)
            .copied()
            .fold(f64::INFINITY, f64::min);
        Ok(MoserMap {
            info: MoserInfo {
                nodes: grid.len(),
                rhs_mass,
                residual: u.residual,
                iterations: u.iterations,
                min_density,
            },
            velocity: Arc::new(v),
            potential: Arc::new(u),
            steps: opts.steps,
        })
    }

    pub fn eval(&self, p: Point) -> Result<Point> {
        Ok(integrate_flow(&self.velocity, p, self.steps)?.point)
    }

    pub fn eval_traced(&self, p: Point) -> Result<FlowResult> {
        integrate_flow(&self.velocity, p, self.steps)
    }

    /// `Φ₁^{-1}`, by integrating backward in time.
    pub fn eval_inverse(&self, p: Point) -> Result<Point> {
        Ok(integrate_flow_between(&self.velocity, p, 1.0, 0.0, self.steps)?.point)
    }

    pub fn velocity(&self) -> &VelocityProvider {
        &self.velocity
    }

    pub fn potential(&self) -> &PotentialField {
        &self.potential
    }

    pub fn info(&self) -> &MoserInfo {
        &self.info
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Moser map from `source` to `ρ_x` on `grid`.
pub fn moser_map(
    fam: &DensityFamily,
    source: &(dyn Fn(Point) -> f64 + Sync),
    x: f64,
    grid: &Grid,
    opts: &MoserOptions,
) -> Result<MoserMap> {
    let pts = grid.points();
    let target: Vec<f64> = pts
        .par_iter()
        .map(|&p| fam.eval(x, p))
        .collect::<Result<_>>()?;
    let src: Vec<f64> = pts.iter().map(|&p| source(p)).collect();
    MoserMap::from_nodal(grid, &src, &target, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;
    use approx::assert_relative_eq;

    #[test]
    fn matches_closed_form_in_1d() {
        let grid = Grid::for_domain(&Domain::interval(), 1, 257).unwrap();
        let rhs: Vec<f64> = grid
            .points()
            .iter()
            .map(|p| (std::f64::consts::PI * p.t).cos())
            .collect();
        let rhs = assemble_rhs_nodal(&grid, &vec![0.0; rhs.len()], &rhs, 1e-3).unwrap();
        let u = solve_neumann_poisson(&rhs, &grid, 1e-12).unwrap();
        let exact = neumann_closed_form_1d(&rhs, &grid.t);
        for (a, b) in u.values.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        // Continuous solution cos(πt)/π².
        let pi2 = std::f64::consts::PI.powi(2);
        for (k, p) in grid.points().iter().enumerate() {
            assert!((u.values[k] - (std::f64::consts::PI * p.t).cos() / pi2).abs() < 1e-5);
        }
    }

    #[test]
    fn incompatible_rhs_rejected() {
        let grid = Grid::for_domain(&Domain::interval(), 1, 33).unwrap();
        let ones = vec![1.0; 33];
        let zeros = vec![0.0; 33];
        assert!(matches!(
            assemble_rhs_nodal(&grid, &zeros, &ones, 1e-6),
            Err(Error::Incompatible { .. })
        ));
    }

    #[test]
    fn torus_and_cylinder_solves() {
        use std::f64::consts::PI;
        for d in [Domain::torus(), Domain::cylinder(1.0).unwrap()] {
            let grid = Grid::for_domain(&d, 32, 33).unwrap();
            let rhs: Vec<f64> = grid
                .points()
                .iter()
                .map(|p| (2.0 * PI * p.a).cos() * (2.0 * PI * p.t).cos())
                .collect();
            let u = solve_neumann_poisson(&rhs, &grid, 1e-11).unwrap();
            assert!(u.residual <= 1e-11);
            let k2 = 8.0 * PI * PI;
            for (k, p) in grid.points().iter().enumerate() {
                let exact = (2.0 * PI * p.a).cos() * (2.0 * PI * p.t).cos() / k2;
                assert!((u.values[k] - exact).abs() < 2e-3 / k2 * 10.0);
            }
        }
    }

    #[test]
    fn flow_pushes_source_to_target_in_1d() {
        // source 1, target 1/2 + m on [0, 1]: F₁(Φ(m)) = m.
        let grid = Grid::for_domain(&Domain::interval(), 1, 513).unwrap();
        let src = vec![1.0; 513];
        let tgt: Vec<f64> = grid.points().iter().map(|p| 0.5 + p.t).collect();
        let map = MoserMap::from_nodal(&grid, &src, &tgt, &MoserOptions::default()).unwrap();
        assert!(map.info().residual <= 1e-10);
        for m in [0.1, 0.3, 0.5, 0.8, 0.95] {
            let y = map.eval(Point::on_line(m)).unwrap().t;
            assert_relative_eq!(0.5 * y + 0.5 * y * y, m, epsilon = 2e-5);
            let back = map.eval_inverse(Point::on_line(y)).unwrap().t;
            assert_relative_eq!(back, m, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_rhs_gives_identity() {
        let grid = Grid::for_domain(&Domain::interval(), 1, 65).unwrap();
        let ones = vec![1.0; 65];
        let map = MoserMap::from_nodal(&grid, &ones, &ones, &MoserOptions::default()).unwrap();
        assert_eq!(map.eval(Point::on_line(0.37)).unwrap().t, 0.37);
    }
}
