//! Browser bindings: deflection detection on a synthetic frame, the closed spline
//! through editable knots, and a full trial with its palpation traces.

use bonedrill::detector::{capture_initial, detect, segment, DetectorConfig, DetectorParams, Label};
use bonedrill::harness::format_pct;
use bonedrill::sensing::{CameraModel, Renderer};
use bonedrill::specimen::{generate_specimen, SpecimenParams};
use bonedrill::trajectory::{build_spline, SamplePointPlan};
use bonedrill::workflow::{run_trial, TrialConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Detector result plus an RGBA view of the cropped residual depth.
#[wasm_bindgen]
pub struct DeflectionView {
    json: String,
    rgba: Vec<u8>,
    width: usize,
    height: usize,
}

#[wasm_bindgen]
impl DeflectionView {
    pub fn json(&self) -> String {
        self.json.clone()
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }
}

/// Renders a severed flap pressed down by `displacement_mm` and runs the detector against
/// an undisturbed reference.
pub fn deflection_view(
    displacement_mm: f64,
    depth_sigma: f64,
    threshold_mm: f64,
    seed: u64,
) -> Result<DeflectionView, String> {
    let mut spec = generate_specimen(seed, &SpecimenParams::default()).map_err(|e| e.to_string())?;
    let cam = CameraModel {
        depth_sigma,
        texture_seed: seed,
        ..CameraModel::default()
    };
    let params = DetectorParams {
        threshold_mm,
        ..DetectorParams::default()
    };
    let renderer = Renderer::new(&cam, &spec.path, spec.bit_radius).map_err(|e| e.to_string())?;
    let cfg = DetectorConfig::for_scene(&params, &cam, &spec.path, spec.bit_radius).map_err(|e| e.to_string())?;
    let rgb = renderer.render_rgb();
    let reference_depth = renderer.render_depth(&spec, 2 * seed);
    let reference = capture_initial(&reference_depth, cfg.crop).map_err(|e| e.to_string())?;
    for p in &mut spec.points {
        p.drilled_depth = p.thickness;
    }
    spec.flap_displacement = displacement_mm;
    let depth = renderer.render_depth(&spec, 2 * seed + 1);
    let reading = detect(&rgb, &depth, &reference, &cfg).map_err(|e| e.to_string())?;
    let labels = segment(&cfg.crop.crop_rgb(&rgb), &cfg.hsv).map_err(|e| e.to_string())?;

    let crop = cfg.crop;
    let scale = (2.0 * displacement_mm.abs()).max(0.1);
    let mut rgba = Vec::with_capacity(4 * crop.width * crop.height);
    for row in 0..crop.height {
        for col in 0..crop.width {
            let i = (crop.y + row) * cam.width + crop.x + col;
            let r = depth.data[i] - reference_depth.data[i];
            let t = (r / scale).clamp(-1.0, 1.0);
            let g = (128.0 + 127.0 * t) as u8;
            let px = match labels.data[row * crop.width + col] {
                Label::Inner => [g, g, 255 - g, 255],
                Label::Outer => [g / 2, g, g / 2, 255],
                Label::Ignore => [40, 40, 40, 255],
            };
            rgba.extend_from_slice(&px);
        }
    }
    let json = json!({
        "mean_inner": reading.mean_inner,
        "mean_outer": reading.mean_outer,
        "delta": reading.delta,
        "threshold": reading.threshold,
        "state": reading.state.code(),
        "inner_px": labels.count(Label::Inner),
        "outer_px": labels.count(Label::Outer),
    })
    .to_string();
    Ok(DeflectionView {
        json,
        rgba,
        width: crop.width,
        height: crop.height,
    })
}

/// Samples the closed spline through evenly spaced knots with depths `z`.
pub fn spline_json(z: &[f64], samples: usize) -> Result<String, String> {
    let mut params = SpecimenParams::default();
    params.path.sample_count = z.len();
    let path = params.path;
    let knots: Vec<SamplePointPlan> = z
        .iter()
        .enumerate()
        .map(|(index, &z_command)| SamplePointPlan {
            index,
            angle: path.sample_angle(index),
            z_command,
            completion_estimate: 0.0,
        })
        .collect();
    let t = build_spline(&path, &knots).map_err(|e| e.to_string())?;
    let samples = samples.max(z.len());
    let theta: Vec<f64> = (0..=samples)
        .map(|i| std::f64::consts::TAU * i as f64 / samples as f64)
        .collect();
    let zs: Vec<f64> = theta.iter().map(|&a| t.z_at(a)).collect();
    Ok(json!({
        "theta": theta,
        "z": zs,
        "knot_angles": knots.iter().map(|k| k.angle).collect::<Vec<_>>(),
        "knot_slopes": t.knot_slopes(),
    })
    .to_string())
}

/// Runs one trial and returns its timeline and palpation traces.
pub fn trial_json(seed: u64, observer_bias: f64, springback_max: f64) -> Result<String, String> {
    let mut cfg = TrialConfig::default();
    cfg.observer.bias = observer_bias;
    cfg.specimen.springback_max = springback_max;
    let o = run_trial(&cfg, seed, 1, None).map_err(|e| e.to_string())?;
    let events: Vec<Value> = o
        .log
        .records
        .iter()
        .map(|r| json!({ "t": r.t, "state": r.state.to_string(), "event": r.event }))
        .collect();
    let rounds: Vec<Value> = o
        .palpations
        .iter()
        .map(|v| {
            let presses: Vec<Value> = v
                .per_point
                .iter()
                .map(|p| {
                    json!({
                        "index": p.point.source_index,
                        "verdict": p.verdict.code(),
                        "exit": format!("{:?}", p.exit),
                        "peak_force": p.peak_force,
                        "trace": p.trace.iter().map(|r| [r.timestamp, r.tip_z, r.f_z, r.delta]).collect::<Vec<_>>(),
                    })
                })
                .collect();
            json!({ "detachable_count": v.detachable_count, "final": v.final_state.code(), "presses": presses })
        })
        .collect();
    Ok(json!({
        "final_state": o.final_state.to_string(),
        "case": o.case.number(),
        "successful": o.successful,
        "detachable": o.detachable,
        "total_s": o.total_s(),
        "palpation_s": o.palpation_s(),
        "palpation_pct": format_pct(o.palpation_fraction()),
        "drilling_cycles": o.drilling_cycles,
        "repeat_cycles": o.repeat_cycles,
        "force_max": cfg.palpation.force_max,
        "events": events,
        "rounds": rounds,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn deflection(displacement_mm: f64, depth_sigma: f64, threshold_mm: f64, seed: u32) -> Result<DeflectionView, JsError> {
    deflection_view(displacement_mm, depth_sigma, threshold_mm, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn spline(z: Vec<f64>, samples: usize) -> Result<String, JsError> {
    spline_json(&z, samples).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn trial(seed: u32, observer_bias: f64, springback_max: f64) -> Result<String, JsError> {
    trial_json(seed as u64, observer_bias, springback_max).map_err(|e| JsError::new(&e))
}
