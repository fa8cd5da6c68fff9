//! Synthetic sensors: the RGB-D microscope camera, the completion-level observer
//! and the 128 SPS force sensor.

mod frames;
mod render;

pub use frames::{read_frames, write_frame, DumpedFrame, FrameIoError, FrameMeta, DEPTH_UNIT_MM};
pub use render::{render_rgbd, LinearStats, Region, Renderer};

use crate::geom::Vec2;
use crate::palpation::DrillTool;
use crate::rng::{self, Stream};
use crate::specimen::SpecimenTruth;
use crate::{require_non_negative, require_positive, ConfigError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    /// Row-major depth in mm.
    pub data: Vec<f64>,
    pub timestamp: f64,
}

impl DepthMap {
    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major interleaved RGB.
    pub data: Vec<u8>,
    pub timestamp: f64,
}

impl RgbImage {
    pub fn pixel(&self, col: usize, row: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Force along the tool axis. Compression of the specimen is positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceSample {
    pub f_z: f64,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionObservation {
    pub levels: Vec<f64>,
    pub average: f64,
    pub timestamp: f64,
}

/// Colour in HSV with hue in degrees and saturation/value in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

impl Hsv {
    pub const fn new(h: f64, s: f64, v: f64) -> Self {
        Self { h, s, v }
    }

    pub fn to_rgb(self) -> [u8; 3] {
        let h = self.h.rem_euclid(360.0) / 60.0;
        let s = self.s.clamp(0.0, 1.0);
        let v = self.v.clamp(0.0, 1.0);
        let c = v * s;
        let x = c * (1.0 - (h % 2.0 - 1.0).abs());
        let (r, g, b) = match h as u32 {
            0 => (c, x, 0.0),
            1 => (x, c, 0.0),
            2 => (0.0, c, x),
            3 => (0.0, x, c),
            4 => (x, 0.0, c),
            _ => (c, 0.0, x),
        };
        let m = v - c;
        let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
        [q(r), q(g), q(b)]
    }

    pub fn from_rgb(rgb: [u8; 3]) -> Self {
        let r = rgb[0] as f64 / 255.0;
        let g = rgb[1] as f64 / 255.0;
        let b = rgb[2] as f64 / 255.0;
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let d = max - min;
        let h = if d == 0.0 {
            0.0
        } else if max == r {
            60.0 * ((g - b) / d).rem_euclid(6.0)
        } else if max == g {
            60.0 * ((b - r) / d + 2.0)
        } else {
            60.0 * ((r - g) / d + 4.0)
        };
        let s = if max == 0.0 { 0.0 } else { d / max };
        Hsv::new(h, s, max)
    }
}

/// Region colours of the synthetic scene and their per-pixel jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Palette {
    pub inner: Hsv,
    pub groove: Hsv,
    pub outer: Hsv,
    pub hue_jitter_deg: f64,
    pub sv_jitter: f64,
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            inner: Hsv::new(35.0, 0.55, 0.85),
            groove: Hsv::new(350.0, 0.70, 0.35),
            outer: Hsv::new(190.0, 0.50, 0.75),
            hue_jitter_deg: 6.0,
            sv_jitter: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub mm_per_px: f64,
    /// World point imaged at the frame centre.
    pub center: Vec2,
    /// Per-pixel depth repeatability (mm).
    pub depth_sigma: f64,
    /// Constant depth accuracy offset (mm).
    pub depth_bias: f64,
    pub palette: Palette,
    /// Seed for the static colour texture; the trial runner sets it per trial.
    #[serde(skip)]
    pub texture_seed: u64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            width: 960,
            height: 540,
            mm_per_px: 0.04,
            center: Vec2::ZERO,
            depth_sigma: 0.02,
            depth_bias: 0.10,
            palette: Palette::default(),
            texture_seed: 0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.width == 0 || self.height == 0 {
            return Err(ConfigError::new("camera.width", "frame must be non-empty"));
        }
        require_positive("camera.mm_per_px", self.mm_per_px)?;
        require_non_negative("camera.depth_sigma", self.depth_sigma)?;
        require_non_negative("camera.palette.hue_jitter_deg", self.palette.hue_jitter_deg)?;
        require_non_negative("camera.palette.sv_jitter", self.palette.sv_jitter)
    }

    /// World coordinates of a pixel centre.
    pub fn pixel_to_world(&self, col: f64, row: f64) -> Vec2 {
        Vec2::new(
            self.center.x + (col + 0.5 - self.width as f64 / 2.0) * self.mm_per_px,
            self.center.y + (row + 0.5 - self.height as f64 / 2.0) * self.mm_per_px,
        )
    }

    /// Continuous pixel coordinates (col, row) of a world point.
    pub fn world_to_pixel(&self, p: Vec2) -> (f64, f64) {
        (
            (p.x - self.center.x) / self.mm_per_px + self.width as f64 / 2.0 - 0.5,
            (p.y - self.center.y) / self.mm_per_px + self.height as f64 / 2.0 - 0.5,
        )
    }

    /// Fails when a disc of `radius` around `center` does not fit in the frame.
    pub fn check_covers(&self, center: Vec2, radius: f64) -> Result<(), ConfigError> {
        let half_w = self.width as f64 * self.mm_per_px / 2.0;
        let half_h = self.height as f64 * self.mm_per_px / 2.0;
        let off = center - self.center;
        if off.x.abs() + radius > half_w || off.y.abs() + radius > half_h {
            return Err(ConfigError::new(
                "camera.mm_per_px",
                format!(
                    "field of view {:.2} x {:.2} mm does not contain the drill path",
                    2.0 * half_w,
                    2.0 * half_h
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserverParams {
    pub sigma: f64,
    pub bias: f64,
}

impl Default for ObserverParams {
    fn default() -> Self {
        Self {
            sigma: 0.05,
            bias: 0.0,
        }
    }
}

impl ObserverParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        require_non_negative("observer.sigma", self.sigma)?;
        if !self.bias.is_finite() {
            return Err(ConfigError::new("observer.bias", "must be finite"));
        }
        Ok(())
    }
}

/// Noisy per-point completion levels standing in for the recognition network.
pub fn observe_completion(
    spec: &SpecimenTruth,
    observer: &ObserverParams,
    seed: u64,
) -> CompletionObservation {
    let mut rng = rng::stream(seed, Stream::Observer);
    let levels: Vec<f64> = spec
        .points
        .iter()
        .map(|p| {
            let eps: f64 = if observer.sigma > 0.0 {
                observer.sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            (p.completion() + observer.bias + eps).clamp(0.0, 1.0)
        })
        .collect();
    let average = levels.iter().sum::<f64>() / levels.len() as f64;
    CompletionObservation {
        levels,
        average,
        timestamp: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForceSensorParams {
    pub sigma: f64,
}

impl Default for ForceSensorParams {
    fn default() -> Self {
        Self { sigma: 0.01 }
    }
}

/// Force sensor with its own noise stream.
#[derive(Debug, Clone)]
pub struct ForceSensor {
    pub sigma: f64,
    rng: ChaCha8Rng,
}

/// One sensor sample together with the noiseless plant force behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceReading {
    pub sample: ForceSample,
    pub plant: f64,
}

impl ForceSensor {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            rng: rng::stream(seed, Stream::ForceNoise),
        }
    }

    pub fn measure(&mut self, plant: f64, timestamp: f64) -> ForceReading {
        let noise: f64 = if self.sigma > 0.0 {
            self.sigma * self.rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        ForceReading {
            sample: ForceSample {
                f_z: plant + noise,
                timestamp,
            },
            plant,
        }
    }
}

/// Samples the sensor with the tool at its current pose, updating the flap pose.
pub fn sample_force(
    spec: &mut SpecimenTruth,
    tip: &DrillTool,
    sensor: &mut ForceSensor,
    timestamp: f64,
) -> ForceReading {
    let plant = spec.apply_contact_force(tip.tip_position.xy(), -tip.tip_position.z);
    sensor.measure(plant, timestamp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specimen::{generate_specimen, SpecimenParams};

    fn spec_at(completion: f64) -> SpecimenTruth {
        let mut s = generate_specimen(
            2,
            &SpecimenParams {
                thickness_sigma: 0.0,
                springback_max: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        for p in &mut s.points {
            p.drilled_depth = completion * p.thickness;
        }
        s
    }

    #[test]
    fn hsv_round_trip_on_palette() {
        for c in [Palette::default().inner, Palette::default().outer] {
            let back = Hsv::from_rgb(c.to_rgb());
            assert!((back.h - c.h).abs() < 1.5, "{back:?} vs {c:?}");
            assert!((back.s - c.s).abs() < 0.01);
            assert!((back.v - c.v).abs() < 0.01);
        }
    }

    #[test]
    fn noiseless_observer_reports_truth() {
        let s = spec_at(0.6);
        let obs = observe_completion(&s, &ObserverParams { sigma: 0.0, bias: 0.0 }, 9);
        assert!(obs.levels.iter().all(|&l| (l - 0.6).abs() < 1e-12));
    }

    #[test]
    fn observer_clamps_at_one() {
        let s = spec_at(1.0);
        let obs = observe_completion(&s, &ObserverParams { sigma: 0.2, bias: 0.05 }, 9);
        assert!(obs.average <= 1.0);
        assert!(obs.levels.iter().all(|&l| (0.0..=1.0).contains(&l)));
    }

    #[test]
    fn positive_bias_crosses_gate_early() {
        let s = spec_at(0.75);
        let obs = observe_completion(&s, &ObserverParams { sigma: 0.0, bias: 0.10 }, 1);
        assert!((obs.average - 0.85).abs() < 1e-12);
        assert!(obs.average > 0.80);
    }

    #[test]
    fn observer_is_deterministic() {
        let s = spec_at(0.5);
        let p = ObserverParams::default();
        assert_eq!(observe_completion(&s, &p, 4), observe_completion(&s, &p, 4));
    }

    #[test]
    fn force_pass_through_without_noise() {
        let mut sensor = ForceSensor::new(0.0, 1);
        assert_eq!(sensor.measure(0.32, 0.0).sample.f_z, 0.32);
    }

    #[test]
    fn force_noise_std() {
        let mut sensor = ForceSensor::new(0.01, 77);
        let xs: Vec<f64> = (0..1000).map(|_| sensor.measure(0.2, 0.0).sample.f_z).collect();
        let mean = xs.iter().sum::<f64>() / 1000.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 999.0;
        let sd = var.sqrt();
        assert!((0.009..=0.011).contains(&sd), "std {sd}");
    }

    #[test]
    fn no_contact_noise_within_three_sigma() {
        let mut sensor = ForceSensor::new(0.01, 5);
        let n = 100_000;
        let inside = (0..n)
            .filter(|_| sensor.measure(0.0, 0.0).sample.f_z.abs() <= 0.03)
            .count();
        assert!(inside as f64 / n as f64 >= 0.996, "{inside}");
    }

    #[test]
    fn camera_fov_check() {
        let cam = CameraModel::default();
        assert!(cam.check_covers(Vec2::ZERO, 4.25).is_ok());
        let tiny = CameraModel {
            mm_per_px: 0.005,
            ..Default::default()
        };
        assert!(tiny.check_covers(Vec2::ZERO, 4.25).is_err());
    }

    #[test]
    fn pixel_world_round_trip() {
        let cam = CameraModel::default();
        let p = cam.pixel_to_world(100.0, 37.0);
        let (c, r) = cam.world_to_pixel(p);
        assert!((c - 100.0).abs() < 1e-9 && (r - 37.0).abs() < 1e-9);
    }
}
