//! Acceptance criteria 1-10. Each criterion prints one line:
//!
//! ```text
//! [PASS] 1 identity law: ...
//! ```
//!
//! Lines go straight to stderr so they are visible without `--nocapture`.
//! The test fails if any criterion fails.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use moser_transport::collar::{build_collar_map, solve_collar_g, CollarOptions};
use moser_transport::density::{
    builtin_family, check_decay_assumptions, envelope_library, DecayEnvelope, DensityFamily,
    EnvelopeKind, ParamRange, ProbeOptions, ReferenceDensity, Verdict,
};
use moser_transport::diagnostics::{
    expectation_curve, lipschitz_obstruction, w_infinity_1d, QuantileFunction, SmoothnessVerdict,
};
use moser_transport::expr::parse_density_expression;
use moser_transport::fd::FdStep;
use moser_transport::geometry::{BoundarySide, Domain, Point};
use moser_transport::quadrature::{geomspace, linspace};
use moser_transport::transport::*;

/// Outcome of one criterion: pass flag and a one-line summary of what was
/// measured.
type Check = (bool, String);

fn family(name: &str) -> DensityFamily {
    builtin_family(name, &BTreeMap::new()).unwrap()
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn identity_law() -> Check {
    let t0 = Instant::now();
    let fam = family("constant");
    let tf = TransportFamily::new(&fam, &PipelineOptions::default()).unwrap();
    let nodes = tf.grid().points();
    let mut err: f64 = 0.0;
    for x in fam.params().samples(5) {
        let map = tf.map_at(x).unwrap();
        for (p, q) in nodes.iter().zip(map.eval_many(&nodes).unwrap()) {
            err = err.max((p.t - q.t).abs());
        }
    }
    let el = t0.elapsed();
    (
        err <= 1e-12 && within(el, 1.0),
        format!(
            "sup |T_x(m) - m| = {err:.3e} over {} nodes, {:.2} s",
            nodes.len(),
            el.as_secs_f64()
        ),
    )
}

/// Root of `y + x(y² − y) = m` in `[0, 1]`.
fn affine_oracle(x: f64, m: f64) -> f64 {
    if x == 0.0 {
        return m;
    }
    let b = 1.0 - x;
    (-b + (b * b + 4.0 * x * m).sqrt()) / (2.0 * x)
}

fn moser_matches_quantile() -> Check {
    let t0 = Instant::now();
    let fam = family("affine");
    let mut opts = PipelineOptions {
        nt: 1024,
        ..PipelineOptions::default()
    };
    opts.moser.steps = 256;
    let tf = TransportFamily::new(&fam, &opts).unwrap();
    let ms = linspace(0.0, 1.0, 1001);
    let pts: Vec<Point> = ms.iter().map(|&m| Point::on_line(m)).collect();
    let mut err: f64 = 0.0;
    let mut spot = f64::NAN;
    for x in [-0.5, -0.25, 0.0, 0.25, 0.5] {
        let map = tf.map_at(x).unwrap();
        for (m, q) in ms.iter().zip(map.eval_many(&pts).unwrap()) {
            err = err.max((q.t - affine_oracle(x, *m)).abs());
        }
        if x == 0.5 {
            spot = map.eval(Point::on_line(0.5)).unwrap().t;
        }
    }
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let el = t0.elapsed();
    (
        err <= 1e-4 && (spot - golden).abs() <= 1e-4 && within(el, 10.0),
        format!(
            "sup distance {err:.3e}, T_1/2(1/2) = {spot:.8} (oracle {golden:.8}), {:.2} s",
            el.as_secs_f64()
        ),
    )
}

fn collar_closed_form() -> Check {
    let fam = DensityFamily::parse(
        Domain::interval(),
        "2*m",
        ParamRange::new(0.0, 1.0).unwrap(),
        2,
    )
    .unwrap();
    let f =
        ReferenceDensity::from_profile(Domain::interval(), BoundarySide::Lower, Arc::new(|t| t))
            .unwrap();
    let mut g_err: f64 = 0.0;
    for t in geomspace(1e-6, 1.0, 100) {
        let g = solve_collar_g(&fam, &f, 0.5, 0.0, t, 1e-14).unwrap();
        g_err = g_err.max((g - t / 2f64.sqrt()).abs());
    }
    let cm = build_collar_map(&fam, &f, 0.5, 2, 0.25, &CollarOptions::default()).unwrap();
    let mut nu_err: f64 = 0.0;
    for t in geomspace(1e-4, 1.0 / 3.0, 100) {
        nu_err = nu_err.max((cm.pushed_density(&fam, 0.0, t).unwrap() - t).abs());
    }
    (
        g_err <= 1e-8 && nu_err <= 1e-6,
        format!("max |g - t/sqrt2| = {g_err:.3e}, max |nu - f| on (0, 1/3] = {nu_err:.3e}"),
    )
}

fn full_pipeline() -> Check {
    let t0 = Instant::now();
    let fam = family("h_power");
    let mut tf = TransportFamily::new(&fam, &PipelineOptions::default()).unwrap();
    let s = tf.verify().unwrap().clone();
    let worst = s.verifications.iter().map(|v| v.l1).fold(0.0, f64::max);
    let floor = s
        .verifications
        .iter()
        .map(|v| v.nu_min)
        .fold(f64::INFINITY, f64::min);
    let el = t0.elapsed();
    (
        s.verifications.len() == 5 && worst <= 1e-3 && floor > 0.0 && within(el, 60.0),
        format!(
            "worst L1 {worst:.3e} over {} parameters, density floor past 1/6 = {floor:.4}, {:.2} s",
            s.verifications.len(),
            el.as_secs_f64()
        ),
    )
}

fn ck_dichotomy() -> Check {
    let fam = family("h_power");
    let tf = TransportFamily::new(&fam, &PipelineOptions::default()).unwrap();
    let bounded = estimate_uniform_ck(
        &tf,
        &log_refined_line(32, 1e-5, 3),
        1,
        &linspace(0.0, 1.0, 9),
        FdStep::Absolute { h: 1e-2 },
    )
    .unwrap();
    let b = &bounded.orders[0];

    let e1 = family("example1");
    let q = QuantileTransport::new(&e1, QuantileSource::Member(0.0)).unwrap();
    let r = estimate_uniform_ck(
        &q,
        &log_refined_line(16, 1e-5, 4),
        1,
        &geomspace(1e-9, 0.9, 100),
        FdStep::Relative {
            frac: 0.05,
            floor: 1e-12,
            center: 0.0,
        },
    )
    .unwrap();
    let o = &r.orders[0];
    let ratios: Vec<f64> = o.by_floor.windows(2).map(|w| w[1].1 / w[0].1).collect();
    // Three consecutive refinements each at least doubling.
    let grows = ratios.windows(3).any(|w| w.iter().all(|&g| g >= 2.0));
    (
        bounded.verdict == CkVerdict::Bounded
            && b.sup.is_finite()
            && r.verdict == CkVerdict::UnboundedSuspect
            && grows,
        format!(
            "h_power sup {:.4} growth {:.3} ({}); example1 growth per decade {:?} ({})",
            b.sup,
            b.growth,
            bounded.verdict.label(),
            ratios
                .iter()
                .map(|g| (g * 100.0).round() / 100.0)
                .collect::<Vec<_>>(),
            r.verdict.label()
        ),
    )
}

fn obstruction_growth() -> Check {
    let t0 = Instant::now();
    let fam = family("example1");
    let r = lipschitz_obstruction(&fam, &[(0.1, 0.0), (0.01, 0.0), (0.001, 0.0)], 1 << 16).unwrap();
    let growth = r.pairs[2].ratio / r.pairs[0].ratio;
    let el = t0.elapsed();
    // Dense oracle: 2^20-node quantile tables.
    let q0 = QuantileFunction::of_family(&fam, 0.0, 1 << 20).unwrap();
    let dense: Vec<f64> = [0.1, 0.01, 0.001]
        .iter()
        .map(|&x| {
            w_infinity_1d(&QuantileFunction::of_family(&fam, x, 1 << 20).unwrap(), &q0).value / x
        })
        .collect();
    let agree = r
        .pairs
        .iter()
        .zip(&dense)
        .all(|(p, d)| (p.ratio - d).abs() <= 1e-2 * d);
    let slope_ok = (-0.3..=-0.1).contains(&r.slope);
    (
        growth >= 2.0 && agree && slope_ok && within(el, 10.0),
        format!(
            "ratio(1e-3)/ratio(1e-1) = {growth:.3}, dense oracle agrees = {agree}, fitted slope {:.4} (window [-0.3, -0.1]: {}), {:.2} s",
            r.slope,
            if slope_ok { "inside" } else { "outside" },
            el.as_secs_f64()
        ),
    )
}

fn expectation_fixture() -> Check {
    let fam = family("example1");
    let h = parse_density_expression("m").unwrap();
    let c =
        expectation_curve(&fam, &h, &[-0.5, 0.0, 0.5], 2, FdStep::Absolute { h: 1e-2 }).unwrap();
    let mid = &c.points[1];
    let d2 = mid.derivatives[1].fine;
    (
        (mid.value - 5.0 / 6.0).abs() <= 1e-6
            && (d2 + 1.0 / 3.0).abs() <= 1e-3
            && c.verdict == SmoothnessVerdict::SmoothConsistent,
        format!(
            "E_h(0) = {:.12}, second difference {d2:.8}, {}",
            mid.value,
            c.verdict.label()
        ),
    )
}

fn assumption_dichotomy() -> Check {
    let opts = ProbeOptions::default();
    let env = DecayEnvelope::new("power(2)", EnvelopeKind::Power { alpha: 2.0 }, 2.0, 2).unwrap();
    let pass = check_decay_assumptions(&family("h_power"), &env, 2, &opts)
        .unwrap()
        .verdict
        == Verdict::Pass;
    let e1 = family("example1");
    let mut all_fail = true;
    let mut witnesses = Vec::new();
    for env in envelope_library(2) {
        let r = check_decay_assumptions(&e1, &env, 2, &opts).unwrap();
        let w = r.witness.map(|w| (w.beta, w.j));
        all_fail &= r.verdict == Verdict::Fail && w == Some((1, 0));
        witnesses.push(w);
    }
    (
        pass && all_fail,
        format!(
            "h_power with power(2): {}; example1 fails {} library envelopes with witnesses (beta, j) {:?}",
            if pass { "PASS" } else { "not PASS" },
            witnesses.len(),
            witnesses.iter().collect::<std::collections::BTreeSet<_>>()
        ),
    )
}

fn cylinder_smoke() -> Check {
    let t0 = Instant::now();
    let d = Domain::cylinder(1.0).unwrap();
    let fam = DensityFamily::parse(
        d,
        "1 + 0.3*x*cos(2*pi*a)*cos(pi*t)",
        ParamRange::new(0.0, 1.0).unwrap(),
        2,
    )
    .unwrap();
    let opts = PipelineOptions {
        mode: Mode::MoserOnly,
        nt: 128,
        na: 128,
        verify_x: vec![1.0],
        push_samples: 1_000_000,
        ..PipelineOptions::default()
    };
    let tf = build_representation(&fam, &opts).unwrap();
    let v = &tf.summary().unwrap().verifications[0];
    let el = t0.elapsed();
    (
        v.l1 <= 5e-3 && v.moser.residual <= 1e-10 && within(el, 300.0),
        format!(
            "L1 {:.3e} (Monte Carlo scale {:.3e}), Neumann residual {:.3e}, {:.1} s",
            v.l1,
            v.mc_error_bar.unwrap_or(f64::NAN),
            v.moser.residual,
            el.as_secs_f64()
        ),
    )
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("h_power.cfg");
    std::fs::write(
        &cfg,
        "command = represent\n[domain]\nkind = interval\n[family]\nbuiltin = h_power\n[pipeline]\nsamples = 500\nseed = 3\n",
    )
    .unwrap();
    let mut reports = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let status = Command::new(env!("CARGO_BIN_EXE_moser-transport"))
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        reports.push(std::fs::read(out.join("represent.json")).unwrap());
    }
    (
        reports[0] == reports[1],
        format!(
            "two runs, {} and {} bytes, identical = {}",
            reports[0].len(),
            reports[1].len(),
            reports[0] == reports[1]
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("identity law", identity_law),
        ("1D Moser equals quantile oracle", moser_matches_quantile),
        ("collar closed form", collar_closed_form),
        ("full pipeline pushforward", full_pipeline),
        ("uniform C1 probe dichotomy", ck_dichotomy),
        ("obstruction growth", obstruction_growth),
        ("E_h fixture", expectation_fixture),
        ("assumption checker dichotomy", assumption_dichotomy),
        ("2D cylinder smoke", cylinder_smoke),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    let _ = std::io::stderr().write_all(b"\n");
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        let line = format!(
            "[{}] {n} {name}: {detail}\n",
            if ok { "PASS" } else { "FAIL" }
        );
        let _ = std::io::stderr().write_all(line.as_bytes());
        if !ok {
            failed.push(n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
