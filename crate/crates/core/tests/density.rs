use std::collections::BTreeMap;

use moser_transport::density::*;
use moser_transport::expr::parse_density_expression;
use moser_transport::geometry::{BoundarySide, Domain, Point};
use moser_transport::quadrature::geomspace;
use proptest::prelude::*;

fn fam(name: &str) -> DensityFamily {
    builtin_family(name, &BTreeMap::new()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn builtins_have_unit_mass(u in 0.0..1.0f64) {
        for name in ["constant", "affine", "h_power", "h_stretched", "h_loglog", "example1"] {
            let f = fam(name);
            let r = f.params();
            let x = r.lo + u * r.width();
            let m = f.mass(x).unwrap();
            prop_assert!((m - 1.0).abs() <= 1e-8, "{} at x = {}: mass {}", name, x, m);
        }
    }

    #[test]
    fn reference_is_dominated(u in 0.0..1.0f64, t in 1e-6..1.0f64) {
        for name in ["h_power", "h_stretched", "example1"] {
            let f = fam(name);
            let reference = make_reference(&f, 0.5).unwrap();
            let r = f.params();
            let x = r.lo + u * r.width();
            let rho = f.eval(x, Point::on_line(t)).unwrap();
            prop_assert!(rho - reference.value(t) > 0.0, "{} x={} t={}", name, x, t);
        }
    }

    #[test]
    fn constant_expressions_match_arithmetic(a in -50.0..50.0f64, b in 0.5..20.0f64, c in -3.0..3.0f64) {
        let text = format!("({a:?}) + ({b:?}) * ({c:?}) - ({a:?}) / ({b:?}) ^ 2");
        let v = parse_density_expression(&text).unwrap().constant_value().unwrap();
        let want = a + b * c - a / b.powi(2);
        prop_assert!((v - want).abs() <= 1e-12 * (1.0 + want.abs()), "{} = {} vs {}", text, v, want);
    }
}

/// Central differences of the exact-derivative families converge at second
/// order.
#[test]
fn finite_differences_converge_to_exact_derivatives() {
    for name in ["h_power", "h_stretched", "example1"] {
        let f = fam(name);
        let x = f.params().midpoint() + 0.1 * f.params().width();
        let p = Point::on_line(0.4);
        for (beta, j) in [(1, 0), (0, 1), (1, 1), (2, 0)] {
            let exact = f
                .derivative(x, p, BoundarySide::Lower, beta, j, (0.0, 0.0))
                .unwrap();
            let errs: Vec<f64> = [0.04, 0.02, 0.01]
                .iter()
                .map(|&h| {
                    (f.fd_derivative(x, p, BoundarySide::Lower, beta, j, h, h)
                        .unwrap()
                        - exact)
                        .abs()
                })
                .collect();
            if errs[0] < 1e-9 {
                continue;
            }
            let order = (errs[1] / errs[2]).log2();
            assert!(
                order >= 1.8,
                "{name} β={beta} j={j}: errors {errs:?}, order {order}"
            );
        }
    }
}

#[test]
fn library_envelopes_close_at_every_order() {
    let k = 2;
    for env in envelope_library(k) {
        for t in geomspace(1e-6, 1.0, 60) {
            let (e, b) = (env.e(0.0, t).unwrap(), env.b(0.0, t).unwrap());
            for j in 1..=k {
                assert!(
                    e.powi(j as i32) <= env.a * b * (1.0 + 1e-12),
                    "{} j={j} t={t}",
                    env.name
                );
            }
        }
    }
}

#[test]
fn expression_family_on_the_cylinder_is_normalised() {
    let d = Domain::cylinder(1.0).unwrap();
    let f = DensityFamily::parse(
        d,
        "1 + 0.3*x*cos(2*pi*a)*cos(pi*t)",
        ParamRange::new(0.0, 1.0).unwrap(),
        2,
    )
    .unwrap();
    f.check_normalisation(5, 1e-8).unwrap();
}

#[test]
fn assumption_checker_dichotomy() {
    let opts = ProbeOptions::default();
    let h = fam("h_power");
    let env = DecayEnvelope::new("power(2)", EnvelopeKind::Power { alpha: 2.0 }, 2.0, 2).unwrap();
    assert_eq!(
        check_decay_assumptions(&h, &env, 2, &opts).unwrap().verdict,
        Verdict::Pass
    );
    let e1 = fam("example1");
    for env in envelope_library(2) {
        let r = check_decay_assumptions(&e1, &env, 2, &opts).unwrap();
        assert_eq!(r.verdict, Verdict::Fail, "{}", env.name);
        let w = r.witness.unwrap();
        assert_eq!((w.beta, w.j), (1, 0), "{}", env.name);
    }
}
