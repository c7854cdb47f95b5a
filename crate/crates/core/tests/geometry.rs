use moser_transport::geometry::*;
use proptest::prelude::*;

fn domains() -> Vec<Domain> {
    vec![
        Domain::interval(),
        Domain::cylinder(1.0).unwrap(),
        Domain::cylinder(2.5).unwrap(),
    ]
}

proptest! {
    #[test]
    fn chart_maps_zero_depth_to_the_boundary(a in 0.0..1.0f64, lower in any::<bool>()) {
        let side = if lower { BoundarySide::Lower } else { BoundarySide::Upper };
        for d in domains() {
            let a = a * d.circumference();
            let p = collar_chart(&d, side, a, 0.0).unwrap();
            prop_assert!(d.is_on_boundary(p, 0.0), "{:?} {:?}", d, p);
        }
    }

    #[test]
    fn chart_jacobian_is_positive(a in 0.0..1.0f64, t in 0.0..1.0f64) {
        for d in domains() {
            for side in d.boundary_components() {
                prop_assert!(collar_jacobian(&d, *side, a * d.circumference(), t).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn chart_round_trips_the_depth(a in 0.0..1.0f64, t in 0.0..1.0f64) {
        let d = Domain::cylinder(1.0).unwrap();
        for side in [BoundarySide::Lower, BoundarySide::Upper] {
            let p = collar_chart(&d, side, a, t).unwrap();
            prop_assert!((collar_coordinate(side, p) - t).abs() < 1e-15);
        }
    }
}

#[test]
fn chart_is_injective_on_a_grid() {
    let d = Domain::cylinder(1.0).unwrap();
    for side in [BoundarySide::Lower, BoundarySide::Upper] {
        let mut pts = Vec::new();
        for i in 0..24 {
            for j in 0..24 {
                let (a, t) = (i as f64 / 24.0, j as f64 / 24.0);
                pts.push(collar_chart(&d, side, a, t).unwrap());
            }
        }
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                assert!(
                    d.distance(pts[i], pts[j]) > 1e-9,
                    "{:?} {:?}",
                    pts[i],
                    pts[j]
                );
            }
        }
    }
}

#[test]
fn torus_has_no_collar() {
    let d = Domain::torus();
    assert!(!d.has_boundary());
    assert!(collar_chart(&d, BoundarySide::Lower, 0.0, 0.0).is_err());
}
