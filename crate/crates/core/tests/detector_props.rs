use bonedrill::detector::{capture_initial, classify, detect, seeds, HsvWindow, DetectorConfig, DetectorParams, Label, RegionLabels, ResidualMap};
use bonedrill::sensing::{render_rgbd, CameraModel, RgbImage};
use bonedrill::specimen::{generate_specimen, SpecimenParams};
use proptest::prelude::*;
use std::sync::OnceLock;

struct Scene {
    rgb: RgbImage,
    cfg: DetectorConfig,
}

fn scene() -> &'static Scene {
    static SCENE: OnceLock<Scene> = OnceLock::new();
    SCENE.get_or_init(|| {
        let params = SpecimenParams::default();
        let spec = generate_specimen(5, &params).unwrap();
        let cam = CameraModel::default();
        let (rgb, _) = render_rgbd(&spec, &cam, 1).unwrap();
        let cfg = DetectorConfig::for_scene(&DetectorParams::default(), &cam, &spec.path, spec.bit_radius).unwrap();
        let rgb = cfg.crop.crop_rgb(&rgb);
        Scene { rgb, cfg }
    })
}

fn labels_and_residual() -> impl Strategy<Value = (RegionLabels, ResidualMap)> {
    (2usize..12, 2usize..12).prop_flat_map(|(w, h)| {
        let n = w * h;
        (
            prop::collection::vec(0u8..3, n),
            prop::collection::vec(-0.5f64..0.5, n),
        )
            .prop_map(move |(l, r)| {
                let mut data: Vec<Label> = l
                    .into_iter()
                    .map(|v| match v {
                        0 => Label::Ignore,
                        1 => Label::Inner,
                        _ => Label::Outer,
                    })
                    .collect();
                data[0] = Label::Inner;
                data[1] = Label::Outer;
                (
                    RegionLabels { width: w, height: h, data },
                    ResidualMap { width: w, height: h, data: r },
                )
            })
    })
}

fn widen(w: HsvWindow, d: [f64; 6]) -> HsvWindow {
    HsvWindow {
        h_min: w.h_min - d[0],
        h_max: w.h_max + d[1],
        s_min: (w.s_min - d[2]).max(0.0),
        s_max: w.s_max + d[3],
        v_min: (w.v_min - d[4]).max(0.0),
        v_max: w.v_max + d[5],
    }
}

proptest! {
    #[test]
    fn constant_shift_cancels((labels, residual) in labels_and_residual(), shift in -5.0f64..5.0) {
        let base = classify(&residual, &labels, 0.12).unwrap();
        prop_assume!((base.delta.abs() - 0.12).abs() > 1e-9);
        let shifted = ResidualMap {
            data: residual.data.iter().map(|v| v + shift).collect(),
            ..residual.clone()
        };
        let r = classify(&shifted, &labels, 0.12).unwrap();
        prop_assert!((r.delta - base.delta).abs() <= 1e-9);
        prop_assert_eq!(r.state, base.state);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn widening_a_window_never_shrinks_its_seeds(
        d_in in prop::array::uniform6(0.0f64..20.0),
        d_out in prop::array::uniform6(0.0f64..20.0),
        which in 0u8..2,
    ) {
        let s = scene();
        let base = seeds(&s.rgb, &s.cfg.hsv);
        let mut hsv = s.cfg.hsv;
        let scale = |d: [f64; 6]| [d[0], d[1], d[2] / 40.0, d[3] / 40.0, d[4] / 40.0, d[5] / 40.0];
        let (mask_before, mask_after) = if which == 0 {
            hsv.inner = widen(hsv.inner, scale(d_in));
            (base.inner, seeds(&s.rgb, &hsv).inner)
        } else {
            hsv.outer = widen(hsv.outer, scale(d_out));
            (base.outer, seeds(&s.rgb, &hsv).outer)
        };
        for (i, (b, a)) in mask_before.iter().zip(&mask_after).enumerate() {
            prop_assert!(!*b || *a, "seed pixel {i} lost after widening");
        }
    }
}

#[test]
fn detect_is_a_pure_function_of_its_inputs() {
    let params = SpecimenParams::default();
    let spec = generate_specimen(9, &params).unwrap();
    let cam = CameraModel::default();
    let (rgb, depth0) = render_rgbd(&spec, &cam, 1).unwrap();
    let (_, depth1) = render_rgbd(&spec, &cam, 2).unwrap();
    let cfg = DetectorConfig::for_scene(&DetectorParams::default(), &cam, &spec.path, spec.bit_radius).unwrap();
    let reference = capture_initial(&depth0, cfg.crop).unwrap();
    let a = detect(&rgb, &depth1, &reference, &cfg).unwrap();
    let b = detect(&rgb, &depth1, &reference, &cfg).unwrap();
    assert_eq!(a, b);
}
