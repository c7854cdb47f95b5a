use std::collections::BTreeMap;
use std::sync::Arc;

use moser_transport::collar::*;
use moser_transport::density::{
    builtin_family, make_reference, DensityFamily, ParamRange, ReferenceDensity,
};
use moser_transport::geometry::{BoundarySide, Domain, Point};
use moser_transport::quadrature::{geomspace, linspace, quad, QuadOptions};
use proptest::prelude::*;

fn h_power() -> (DensityFamily, ReferenceDensity) {
    let fam = builtin_family("h_power", &BTreeMap::new()).unwrap();
    let f = make_reference(&fam, 0.5).unwrap();
    (fam, f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn collar_profile_invariants(x in 0.0..1.0f64) {
        let (fam, f) = h_power();
        let cm = build_collar_map(&fam, &f, x, 2, 0.25, &CollarOptions::default()).unwrap();
        let prof = &cm.profiles()[0];
        let opts = QuadOptions::with_tol(1e-300, 1e-12);
        for i in 1..prof.t.len() {
            let (t, g, gb, dgb) = (prof.t[i], prof.g[i], prof.gbar[i], prof.dgbar[i]);
            // Defining equation.
            let lhs = quad(|s| fam.eval_line(x, s).unwrap(), 0.0, g, opts).unwrap();
            let rhs = f.mass_to(t);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1e-300) + 1e-15, "t={} lhs={} rhs={}", t, lhs, rhs);
            // Domination and the cutoff sandwich.
            prop_assert!(g <= t * (1.0 + 1e-12), "g={} t={}", g, t);
            prop_assert!(gb >= g.min(t) - 1e-14 && gb <= t + 1e-14);
            prop_assert!(dgb > 0.0, "dgbar({}) = {}", t, dgb);
        }
        // Uniformisation on (0, 1/3]: exact at the table nodes, up to
        // interpolation error between them.
        for i in 1..prof.t.len() {
            let t = prof.t[i];
            if t > 1.0 / 3.0 {
                break;
            }
            let nu = fam.eval_line(x, prof.gbar[i]).unwrap() * prof.dgbar[i];
            prop_assert!((nu - f.value(t)).abs() <= 1e-8 * f.value(t), "t={} nu={} f={}", t, nu, f.value(t));
        }
        for t in geomspace(1e-4, 1.0 / 3.0, 60) {
            let nu = cm.pushed_density(&fam, 0.0, t).unwrap();
            prop_assert!((nu - f.value(t)).abs() <= 1e-3 * f.value(t), "t={} nu={} f={}", t, nu, f.value(t));
        }
        let floor = linspace(1.0 / 6.0, 1.0, 200)
            .into_iter()
            .map(|t| cm.pushed_density(&fam, 0.0, t).unwrap())
            .fold(f64::INFINITY, f64::min);
        prop_assert!(floor > 0.0);
    }
}

#[test]
fn linear_closed_form_on_a_log_grid() {
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
    for t in geomspace(1e-6, 1.0 / 3.0, 100) {
        let g = solve_collar_g(&fam, &f, 0.3, 0.0, t, 1e-13).unwrap();
        assert!((g - t / 2f64.sqrt()).abs() <= 1e-8, "t={t}: {g}");
    }
}

#[test]
fn identity_beyond_two_thirds() {
    let (fam, f) = h_power();
    let cm = build_collar_map(&fam, &f, 0.7, 2, 0.25, &CollarOptions::default()).unwrap();
    for t in linspace(2.0 / 3.0, 1.0, 20) {
        assert_eq!(cm.eval(Point::on_line(t)).unwrap().t, t);
    }
    assert!(cm.info.t_star > 1.0 / 6.0 && cm.info.t_star <= 0.25);
}

#[test]
fn cutoff_shape() {
    let c = Cutoff::new(2);
    assert_eq!(c.eta(0.2), 1.0);
    assert_eq!(c.eta(0.7), 0.0);
    let ts = linspace(1.0 / 3.0, 2.0 / 3.0, 101);
    assert!(ts.windows(2).all(|w| c.eta(w[1]) <= c.eta(w[0])));
    assert!(c.deta(1.0 / 3.0).abs() < 1e-12 && c.deta(2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn upper_side_collar_on_the_cylinder() {
    let d = Domain::cylinder(1.0).unwrap();
    let fam = DensityFamily::parse(
        d,
        "2*(1 - t)*(1 + 0.2*x*sin(2*pi*a))",
        ParamRange::new(0.0, 1.0).unwrap(),
        2,
    )
    .unwrap();
    let f = ReferenceDensity::from_profile(d, BoundarySide::Upper, Arc::new(|t| 0.8 * t)).unwrap();
    let opts = CollarOptions {
        side: BoundarySide::Upper,
        n_a: 8,
        ..CollarOptions::default()
    };
    let cm = build_collar_map(&fam, &f, 1.0, 2, 0.25, &opts).unwrap();
    for a in [0.0, 0.25, 0.6] {
        for t in [0.01, 0.1, 0.3] {
            let nu = cm.pushed_density(&fam, a, t).unwrap();
            assert!((nu - 0.8 * t).abs() < 1e-3, "a={a} t={t}: {nu}");
        }
    }
}
