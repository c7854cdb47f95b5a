use std::collections::BTreeMap;
use std::sync::Arc;

use moser_transport::density::builtin_family;
use moser_transport::fd::FdStep;
use moser_transport::geometry::Point;
use moser_transport::quadrature::linspace;
use moser_transport::transport::*;
use proptest::prelude::*;

fn h_power_family() -> TransportFamily {
    let fam = builtin_family("h_power", &BTreeMap::new()).unwrap();
    TransportFamily::new(&fam, &PipelineOptions::default()).unwrap()
}

#[test]
fn composition_pushes_the_source_onto_every_member() {
    let mut tf = h_power_family();
    assert_eq!(tf.mode(), Mode::CollarMoser);
    let s = tf.verify().unwrap().clone();
    assert!(s.pass);
    for v in &s.verifications {
        assert!(v.l1 <= 1e-3, "x={} l1={}", v.x, v.l1);
        assert!(v.nu_min > 0.0);
    }
}

#[test]
fn maps_are_continuous_across_the_band_edge() {
    let tf = h_power_family();
    let v = tf.options().v;
    for x in [0.0, 0.5, 1.0] {
        let map = tf.map_at(x).unwrap();
        let below = map.eval(Point::on_line(v * (1.0 - 1e-10))).unwrap().t;
        let above = map.eval(Point::on_line(v * (1.0 + 1e-10))).unwrap().t;
        assert!((above - below).abs() < 1e-6, "x={x}: {below} vs {above}");
        assert!(above >= below);
    }
}

#[test]
fn maps_are_strictly_increasing() {
    let tf = h_power_family();
    let map = tf.map_at(0.3).unwrap();
    let pts: Vec<Point> = linspace(0.0, 1.0, 1001)
        .into_iter()
        .map(Point::on_line)
        .collect();
    let ys = map.eval_many(&pts).unwrap();
    assert!(ys.windows(2).all(|w| w[1].t > w[0].t));
    assert_eq!(ys[0].t, 0.0);
    assert!((ys[1000].t - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// A strictly increasing map pushing μ to μ_x is unique, so the
    /// pipeline must agree with the monotone rearrangement.
    #[test]
    fn bounded_below_families_match_the_rearrangement(x in -0.5..0.5f64) {
        let fam = builtin_family("affine", &BTreeMap::new()).unwrap();
        let tf = TransportFamily::new(&fam, &PipelineOptions::default()).unwrap();
        prop_assert_eq!(tf.mode(), Mode::MoserOnly);
        let q = QuantileTransport::new(&fam, QuantileSource::Uniform).unwrap();
        let map = tf.map_at(x).unwrap();
        for m in linspace(0.0, 1.0, 33) {
            let y = map.eval(Point::on_line(m)).unwrap().t;
            prop_assert!((y - q.eval(x, m).unwrap()).abs() < 1e-4);
        }
    }
}

#[test]
fn summaries_are_deterministic() {
    let mut a = h_power_family();
    let mut b = h_power_family();
    let ja = serde_json::to_string(a.verify().unwrap()).unwrap();
    let jb = serde_json::to_string(b.verify().unwrap()).unwrap();
    assert_eq!(ja, jb);
}

#[test]
fn random_maps_reproduce_the_family() {
    let tf = h_power_family();
    let draws = sample_random_maps(&tf, 4000, 11).unwrap();
    assert_eq!(draws, sample_random_maps(&tf, 4000, 11).unwrap());
    assert_ne!(draws, sample_random_maps(&tf, 4000, 12).unwrap());
    for x in [0.0, 1.0] {
        // 1.63 / sqrt(n) is the 1% Kolmogorov-Smirnov critical value.
        assert!(random_map_ks(&tf, &draws, x).unwrap() < 1.63 / 4000f64.sqrt());
    }
}

#[test]
fn ck_probe_bounded_for_the_pipeline_and_unbounded_for_example_one() {
    let tf = h_power_family();
    let r = estimate_uniform_ck(
        &tf,
        &log_refined_line(32, 1e-5, 3),
        1,
        &linspace(0.0, 1.0, 9),
        FdStep::Absolute { h: 1e-2 },
    )
    .unwrap();
    assert_eq!(r.verdict, CkVerdict::Bounded);

    let fam = builtin_family("example1", &BTreeMap::new()).unwrap();
    let q = QuantileTransport::new(&fam, QuantileSource::Member(0.0)).unwrap();
    let xs: Vec<f64> = (0..60)
        .map(|i| 1e-9 * (0.9e9f64).powf(i as f64 / 59.0))
        .collect();
    let step = FdStep::Relative {
        frac: 0.05,
        floor: 1e-12,
        center: 0.0,
    };
    let r = estimate_uniform_ck(&q, &log_refined_line(16, 1e-4, 4), 1, &xs, step).unwrap();
    assert_eq!(r.verdict, CkVerdict::UnboundedSuspect);
}

#[test]
fn conjugation_by_a_rotation_keeps_the_probe_bounded() {
    let fam = builtin_family("affine", &BTreeMap::new()).unwrap();
    let tf: Arc<dyn ParametricMap> =
        Arc::new(TransportFamily::new(&fam, &PipelineOptions::default()).unwrap());
    let flip = Diffeo::new("flip", |_, p: Point| Point::on_line(1.0 - p.t));
    let c = conjugate_family(tf, flip).unwrap();
    let r = estimate_uniform_ck(
        &c,
        &log_refined_line(16, 1e-4, 2),
        1,
        &linspace(-0.5, 0.5, 5),
        FdStep::Absolute { h: 1e-2 },
    )
    .unwrap();
    assert_eq!(r.verdict, CkVerdict::Bounded);
}
