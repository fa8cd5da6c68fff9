use bonedrill::geom::Vec2;
use bonedrill::specimen::{generate_specimen, SpecimenParams, SpecimenTruth};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Drill { k: usize, depth: f64 },
    Press { x: f64, y: f64, tip: f64 },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0usize..32, 0.0f64..0.7).prop_map(|(k, depth)| Op::Drill { k, depth }),
        (-3.0f64..3.0, -3.0f64..3.0, -0.2f64..1.0).prop_map(|(x, y, tip)| Op::Press { x, y, tip }),
    ]
}

fn specimen(seed: u64) -> SpecimenTruth {
    generate_specimen(seed, &SpecimenParams::default()).unwrap()
}

fn apply(spec: &mut SpecimenTruth, op: &Op) {
    match *op {
        Op::Drill { k, depth } => spec.apply_drill_pass(k, depth),
        Op::Press { x, y, tip } => {
            spec.apply_contact_force(Vec2::new(x, y), tip);
        }
    }
}

proptest! {
    #[test]
    fn webs_never_grow(seed in 0u64..1000, ops in prop::collection::vec(op(), 1..60)) {
        let mut spec = specimen(seed);
        for op in &ops {
            let before: Vec<f64> = spec.points.iter().map(|p| p.web()).collect();
            apply(&mut spec, op);
            for (p, b) in spec.points.iter().zip(&before) {
                prop_assert!(p.web() <= *b, "web at {} grew from {} to {}", p.index, b, p.web());
            }
        }
    }

    #[test]
    fn membrane_never_heals(seed in 0u64..1000, ops in prop::collection::vec(op(), 1..60)) {
        let mut spec = specimen(seed);
        let mut damaged = false;
        for op in &ops {
            apply(&mut spec, op);
            if damaged {
                prop_assert!(!spec.membrane_intact);
            }
            damaged |= !spec.membrane_intact;
        }
    }

    #[test]
    fn detachability_is_permanent(seed in 0u64..1000, ops in prop::collection::vec(op(), 1..40)) {
        let mut spec = specimen(seed);
        for k in 0..spec.points.len() {
            let t = spec.points[k].thickness + spec.points[k].springback;
            spec.apply_drill_pass(k, t);
        }
        prop_assert!(spec.is_detachable());
        for op in &ops {
            apply(&mut spec, op);
            prop_assert!(spec.is_detachable());
        }
    }

    #[test]
    fn drilling_to_thickness_without_springback_detaches(seed in 0u64..1000) {
        let params = SpecimenParams { springback_max: 0.0, ..SpecimenParams::default() };
        let mut spec = generate_specimen(seed, &params).unwrap();
        for k in 0..spec.points.len() {
            let t = spec.points[k].thickness;
            spec.apply_drill_pass(k, t);
        }
        prop_assert!(spec.is_detachable());
        prop_assert!(spec.membrane_intact);
    }

    #[test]
    fn contact_force_is_repeatable_and_does_not_drill(
        seed in 0u64..1000,
        drilled in 0.0f64..1.0,
        x in -3.0f64..3.0,
        y in -3.0f64..3.0,
        tip in 0.0f64..0.3,
    ) {
        let mut spec = specimen(seed);
        for k in 0..spec.points.len() {
            let t = spec.points[k].thickness * drilled;
            spec.apply_drill_pass(k, t);
        }
        let webs: Vec<f64> = spec.points.iter().map(|p| p.web()).collect();
        let mut a = spec.clone();
        let mut b = spec.clone();
        let fa = a.apply_contact_force(Vec2::new(x, y), tip);
        let fb = b.apply_contact_force(Vec2::new(x, y), tip);
        prop_assert_eq!(fa.to_bits(), fb.to_bits());
        if a.membrane_intact == spec.membrane_intact {
            prop_assert_eq!(a.apply_contact_force(Vec2::new(x, y), tip).to_bits(), fa.to_bits());
        }
        let after: Vec<f64> = a.points.iter().map(|p| p.web()).collect();
        prop_assert_eq!(after, webs);
    }
}
