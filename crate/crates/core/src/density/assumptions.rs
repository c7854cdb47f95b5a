use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::{DecayEnvelope, DensityFamily};
use crate::error::{Error, Result};
use crate::geometry::{collar_chart, BoundarySide, DomainKind, Point};
use crate::quadrature::{geomspace, quad, QuadOptions};

/// Which inequality a margin refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// `E, B ≥ 1`.
    Codomain,
    /// `|D_x^β D_t^j ρ| ≤ E^β B^j ρ`.
    Derivative,
    /// `∫_0^t |D_x^β ρ| ≤ (E^β / B) ρ`.
    Integrated,
    /// `E^k ≤ A B`.
    Closure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Worst observed ratio `lhs / rhs` for one inequality; above one means the
/// inequality is violated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Margin {
    pub condition: Condition,
    pub beta: usize,
    pub j: usize,
    pub margin: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub x: f64,
    pub a: f64,
    pub t: f64,
}

impl Margin {
    pub fn fails(&self) -> bool {
        !(self.margin <= 1.0 + 1e-9)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeOptions {
    pub side: BoundarySide,
    /// Equispaced parameter probes.
    pub n_x: usize,
    /// Parameters approached geometrically by extra probes `c ± 10^{-d}`.
    pub x_refine: Vec<f64>,
    pub refine_decades: usize,
    /// Geometric probes of the collar coordinate in `[t_min, 1]`.
    pub n_t: usize,
    pub t_min: f64,
    /// Boundary-coordinate probes on the cylinder.
    pub n_a: usize,
    /// Finite-difference steps `(h_x, h_t)` for tabulated families.
    pub fd: (f64, f64),
    pub quad_rel_tol: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            side: BoundarySide::Lower,
            n_x: 9,
            x_refine: Vec::new(),
            refine_decades: 6,
            n_t: 48,
            t_min: 1e-6,
            n_a: 8,
            fd: (1e-4, 1e-4),
            quad_rel_tol: 1e-8,
        }
    }
}

impl ProbeOptions {
    pub fn x_probes(&self, fam: &DensityFamily) -> Vec<f64> {
        let range = fam.params();
        let mut xs = range.samples(self.n_x.max(2));
        for &c in &self.x_refine {
            for d in 1..=self.refine_decades {
                let h = 10f64.powi(-(d as i32)) * range.width();
                for x in [c - h, c + h] {
                    if range.contains(x) {
                        xs.push(x);
                    }
                }
            }
        }
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs
    }
}

/// Outcome of probing the decay inequalities.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub verdict: Verdict,
    pub envelope: String,
    pub k: usize,
    pub probes: usize,
    /// Worst margin per inequality and derivative order.
    pub margins: Vec<Margin>,
    pub witness: Option<Margin>,
    /// Probe locations where the check could not be evaluated.
    pub inconclusive: Vec<String>,
    /// The verdict is sampling evidence at the probe resolution, not a proof.
    pub note: String,
}

type Key = (Condition, usize, usize);

fn record(worst: &mut BTreeMap<Key, Margin>, m: Margin) {
    let e = worst.entry((m.condition, m.beta, m.j)).or_insert(m);
    if m.margin > e.margin || (m.margin.is_nan() && !e.margin.is_nan()) {
        *e = m;
    }
}

/// Probes the decay inequalities of order `k` for `fam` against `env` on a
/// grid of parameters and collar coordinates refined toward the boundary.
pub fn check_decay_assumptions(
    fam: &DensityFamily,
    env: &DecayEnvelope,
    k: usize,
    opts: &ProbeOptions,
) -> Result<AssumptionReport> {
    let domain = *fam.domain();
    if domain.kind() == DomainKind::Torus {
        return Err(Error::NoCollar);
    }
    if k > crate::jet::MAX_ORDER {
        return Err(Error::InvalidParam(format!(
            "order {k} exceeds {}",
            crate::jet::MAX_ORDER
        )));
    }
    let xs = opts.x_probes(fam);
    let ts = geomspace(opts.t_min, 1.0, opts.n_t.max(2));
    let as_: Vec<f64> = match domain.kind() {
        DomainKind::Cylinder => (0..opts.n_a.max(1))
            .map(|i| domain.circumference() * i as f64 / opts.n_a.max(1) as f64)
            .collect(),
        _ => vec![0.0],
    };
    let side = opts.side;

    // Envelope-only inequalities.
    let mut worst: BTreeMap<Key, Margin> = BTreeMap::new();
    for &a in &as_ {
        for &t in &ts {
            let (e, b) = (env.e(a, t)?, env.b(a, t)?);
            let lo = e.min(b);
            record(
                &mut worst,
                Margin {
                    condition: Condition::Codomain,
                    beta: 0,
                    j: 0,
                    margin: 1.0 / lo,
                    lhs: 1.0,
                    rhs: lo,
                    x: f64::NAN,
                    a,
                    t,
                },
            );
            let lhs = e.powi(k as i32) / (env.a * b);
            record(
                &mut worst,
                Margin {
                    condition: Condition::Closure,
                    beta: k,
                    j: 0,
                    margin: lhs,
                    lhs,
                    rhs: 1.0,
                    x: f64::NAN,
                    a,
                    t,
                },
            );
        }
    }

    let jobs: Vec<(f64, f64)> = xs
        .iter()
        .flat_map(|&x| as_.iter().map(move |&a| (x, a)))
        .collect();
    let per_job: Vec<(BTreeMap<Key, Margin>, Vec<String>)> = jobs
        .par_iter()
        .map(|&(x, a)| probe_line(fam, env, k, opts, side, x, a, &ts))
        .collect();
    let mut inconclusive = Vec::new();
    for (w, notes) in per_job {
        for m in w.into_values() {
            record(&mut worst, m);
        }
        inconclusive.extend(notes);
    }

    let margins: Vec<Margin> = worst.into_values().collect();
    let witness = pick_witness(&margins);
    let verdict = if witness.is_some() {
        Verdict::Fail
    } else if !inconclusive.is_empty() {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    Ok(AssumptionReport {
        verdict,
        envelope: env.name.clone(),
        k,
        probes: jobs.len() * ts.len(),
        margins,
        witness,
        inconclusive,
        note: format!(
            "sampling-based evidence on {} parameter x {} collar probes down to t = {:e}",
            xs.len(),
            ts.len(),
            opts.t_min
        ),
    })
}

/// Failing inequalities involving parameter derivatives are preferred, lowest
/// order first, then fewest collar derivatives, then the largest violation.
fn pick_witness(margins: &[Margin]) -> Option<Margin> {
    margins
        .iter()
        .filter(|m| m.fails())
        .min_by(|p, q| {
            let key = |m: &Margin| (m.beta == 0, m.beta + m.j, m.j);
            key(p).cmp(&key(q)).then(q.margin.total_cmp(&p.margin))
        })
        .copied()
}

#[allow(clippy::too_many_arguments)]
fn probe_line(
    fam: &DensityFamily,
    env: &DecayEnvelope,
    k: usize,
    opts: &ProbeOptions,
    side: BoundarySide,
    x: f64,
    a: f64,
    ts: &[f64],
) -> (BTreeMap<Key, Margin>, Vec<String>) {
    let mut worst = BTreeMap::new();
    let mut notes = Vec::new();
    let domain = *fam.domain();
    let point = |t: f64| collar_chart(&domain, side, a, t);

    // Pointwise derivative bounds.
    for &t in ts {
        let res: Result<()> = (|| {
            let p = point(t)?;
            let (e, b) = (env.e(a, t)?, env.b(a, t)?);
            let derivs = all_derivatives(fam, x, p, side, k, opts.fd)?;
            let rho = derivs[&(0, 0)];
            if !(rho > 0.0) {
                return Err(Error::EvalDomain(format!(
                    "density vanishes at x = {x}, t = {t}"
                )));
            }
            for (&(beta, j), &d) in &derivs {
                if beta + j == 0 {
                    continue;
                }
                let lhs = d.abs() / rho;
                let rhs = e.powi(beta as i32) * b.powi(j as i32);
                record(
                    &mut worst,
                    Margin {
                        condition: Condition::Derivative,
                        beta,
                        j,
                        margin: lhs / rhs,
                        lhs,
                        rhs,
                        x,
                        a,
                        t,
                    },
                );
            }
            Ok(())
        })();
        if let Err(e) = res {
            notes.push(format!("x = {x}, a = {a}, t = {t}: {e}"));
        }
    }

    // Integrated bounds, accumulated along the sorted probes.
    let qopts = QuadOptions::with_tol(0.0, opts.quad_rel_tol);
    for beta in 0..=k {
        let mut acc = 0.0;
        let mut prev = 0.0;
        for &t in ts {
            let res: Result<()> = (|| {
                let mut err = None;
                let seg = quad(
                    |s| match point(s).and_then(|p| x_derivative(fam, x, p, side, beta, opts.fd.0))
                    {
                        Ok(v) => v.abs(),
                        Err(e) => {
                            err.get_or_insert(e);
                            f64::NAN
                        }
                    },
                    prev,
                    t,
                    qopts,
                );
                if let Some(e) = err {
                    return Err(e);
                }
                acc += seg?;
                prev = t;
                let rho = fam.eval(x, point(t)?)?;
                if !(rho > 0.0) {
                    return Err(Error::EvalDomain(format!(
                        "density vanishes at x = {x}, t = {t}"
                    )));
                }
                let (e, b) = (env.e(a, t)?, env.b(a, t)?);
                let lhs = acc / rho;
                let rhs = e.powi(beta as i32) / b;
                record(
                    &mut worst,
                    Margin {
                        condition: Condition::Integrated,
                        beta,
                        j: 0,
                        margin: lhs / rhs,
                        lhs,
                        rhs,
                        x,
                        a,
                        t,
                    },
                );
                Ok(())
            })();
            if let Err(e) = res {
                notes.push(format!(
                    "integrated, beta = {beta}, x = {x}, a = {a}, t = {t}: {e}"
                ));
                break;
            }
        }
    }
    (worst, notes)
}

fn all_derivatives(
    fam: &DensityFamily,
    x: f64,
    p: Point,
    side: BoundarySide,
    k: usize,
    fd: (f64, f64),
) -> Result<BTreeMap<(usize, usize), f64>> {
    let mut out = BTreeMap::new();
    if fam.has_exact_derivatives() {
        let jet = fam.jet(x, p, side, k)?;
        for total in 0..=k {
            for j in 0..=total {
                out.insert((total - j, j), jet.derivative(total - j, j));
            }
        }
    } else {
        for total in 0..=k {
            for j in 0..=total {
                out.insert(
                    (total - j, j),
                    fam.fd_derivative(x, p, side, total - j, j, fd.0, fd.1)?,
                );
            }
        }
    }
    Ok(out)
}

fn x_derivative(
    fam: &DensityFamily,
    x: f64,
    p: Point,
    side: BoundarySide,
    beta: usize,
    hx: f64,
) -> Result<f64> {
    if beta == 0 {
        fam.eval(x, p)
    } else if fam.has_exact_derivatives() {
        Ok(fam.x_jet(x, p, beta)?.derivative(beta, 0))
    } else {
        fam.fd_derivative(x, p, side, beta, 0, hx, hx)
    }
}
