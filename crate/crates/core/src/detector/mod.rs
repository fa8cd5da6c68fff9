//! Deflection detector: crop, subtract the initial depth, segment the colour image
//! into flap and body, and classify the mean residual difference.

mod segment;

pub use segment::{erode, gradient_magnitude, segment, seeds, HsvConfig, HsvWindow, RingMask, Seeds};

use crate::sensing::{CameraModel, DepthMap, RgbImage};
use crate::specimen::DrillPath;
use crate::{require_positive, ConfigError, FlapState};
use serde::{Deserialize, Serialize};
use std::hash::{Hash, Hasher};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl CropRect {
    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.width > 0 && self.height > 0 && self.x + self.width <= width && self.y + self.height <= height
    }

    /// Square crop centred on `center` covering a disc of `radius_mm`.
    pub fn around(cam: &CameraModel, center: crate::geom::Vec2, radius_mm: f64) -> Result<Self, ConfigError> {
        let (cc, cr) = cam.world_to_pixel(center);
        let half = radius_mm / cam.mm_per_px;
        let x0 = (cc - half).floor();
        let y0 = (cr - half).floor();
        let x1 = (cc + half).ceil() + 1.0;
        let y1 = (cr + half).ceil() + 1.0;
        if x0 < 0.0 || y0 < 0.0 || x1 > cam.width as f64 || y1 > cam.height as f64 {
            return Err(ConfigError::new(
                "detector.crop_margin_mm",
                "crop around the drill path leaves the frame",
            ));
        }
        Ok(Self {
            x: x0 as usize,
            y: y0 as usize,
            width: (x1 - x0) as usize,
            height: (y1 - y0) as usize,
        })
    }

    pub fn crop_depth(&self, depth: &DepthMap) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for row in self.y..self.y + self.height {
            let start = row * depth.width + self.x;
            out.extend_from_slice(&depth.data[start..start + self.width]);
        }
        out
    }

    pub fn crop_rgb(&self, rgb: &RgbImage) -> RgbImage {
        let mut data = Vec::with_capacity(3 * self.width * self.height);
        for row in self.y..self.y + self.height {
            let start = 3 * (row * rgb.width + self.x);
            data.extend_from_slice(&rgb.data[start..start + 3 * self.width]);
        }
        RgbImage {
            width: self.width,
            height: self.height,
            data,
            timestamp: rgb.timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Ignore = 0,
    Inner = 1,
    Outer = 2,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Ignore => "ignore",
            Label::Inner => "inner",
            Label::Outer => "outer",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionLabels {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Label>,
}

impl RegionLabels {
    pub fn count(&self, label: Label) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialReference {
    pub crop: CropRect,
    pub frame_width: usize,
    pub frame_height: usize,
    pub depth: Vec<f64>,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetachabilityReading {
    pub mean_inner: f64,
    pub mean_outer: f64,
    pub delta: f64,
    pub threshold: f64,
    pub state: FlapState,
    pub timestamp: f64,
}

impl DetachabilityReading {
    /// Applies the strict threshold rule to a pair of region means.
    pub fn from_means(mean_inner: f64, mean_outer: f64, threshold: f64, timestamp: f64) -> Self {
        let delta = mean_inner - mean_outer;
        let state = if delta.abs() > threshold {
            FlapState::Detachable
        } else {
            FlapState::NonDetachable
        };
        Self {
            mean_inner,
            mean_outer,
            delta,
            threshold,
            state,
            timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectorError {
    #[error("crop {crop:?} does not fit a {width}x{height} frame")]
    CropOutsideFrame {
        crop: CropRect,
        width: usize,
        height: usize,
    },
    #[error("frame is {got_w}x{got_h}, reference was taken on {want_w}x{want_h}")]
    DimensionMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("no {region} seed pixels matched the colour window")]
    EmptySeeds { region: Label },
    #[error("{region} region is empty")]
    EmptyRegion { region: Label },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Crop,
    Subtract,
    Segment,
    Classify,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Crop => "crop",
            Stage::Subtract => "subtract",
            Stage::Segment => "segment",
            Stage::Classify => "classify",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("detector stage {stage}: {source}")]
pub struct DetectError {
    pub stage: Stage,
    #[source]
    pub source: DetectorError,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, DetectError>;
}

impl<T> AtStage<T> for Result<T, DetectorError> {
    fn at(self, stage: Stage) -> Result<T, DetectError> {
        self.map_err(|source| DetectError { stage, source })
    }
}

pub fn capture_initial(depth: &DepthMap, crop: CropRect) -> Result<InitialReference, DetectorError> {
    if !crop.fits(depth.width, depth.height) {
        return Err(DetectorError::CropOutsideFrame {
            crop,
            width: depth.width,
            height: depth.height,
        });
    }
    Ok(InitialReference {
        crop,
        frame_width: depth.width,
        frame_height: depth.height,
        depth: crop.crop_depth(depth),
        timestamp: depth.timestamp,
    })
}

pub fn subtract(current: &DepthMap, reference: &InitialReference) -> Result<ResidualMap, DetectorError> {
    if current.width != reference.frame_width || current.height != reference.frame_height {
        return Err(DetectorError::DimensionMismatch {
            got_w: current.width,
            got_h: current.height,
            want_w: reference.frame_width,
            want_h: reference.frame_height,
        });
    }
    let crop = reference.crop;
    let data = crop
        .crop_depth(current)
        .into_iter()
        .zip(&reference.depth)
        .map(|(c, i)| c - i)
        .collect();
    Ok(ResidualMap {
        width: crop.width,
        height: crop.height,
        data,
    })
}

pub fn classify(
    residual: &ResidualMap,
    labels: &RegionLabels,
    threshold: f64,
) -> Result<DetachabilityReading, DetectorError> {
    if residual.width != labels.width || residual.height != labels.height {
        return Err(DetectorError::DimensionMismatch {
            got_w: residual.width,
            got_h: residual.height,
            want_w: labels.width,
            want_h: labels.height,
        });
    }
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for (v, l) in residual.data.iter().zip(&labels.data) {
        match l {
            Label::Inner => {
                si += v;
                ni += 1;
            }
            Label::Outer => {
                so += v;
                no += 1;
            }
            Label::Ignore => {}
        }
    }
    if ni == 0 {
        return Err(DetectorError::EmptyRegion { region: Label::Inner });
    }
    if no == 0 {
        return Err(DetectorError::EmptyRegion { region: Label::Outer });
    }
    Ok(DetachabilityReading::from_means(
        si / ni as f64,
        so / no as f64,
        threshold,
        0.0,
    ))
}

/// User-facing detector settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorParams {
    /// Classification threshold on |delta| (mm). Guidance: on the order of the
    /// specimen's average thickness.
    pub threshold_mm: f64,
    /// Crop half-size beyond the path radius (mm).
    pub crop_margin_mm: f64,
    /// Full width of the ignored groove ring in drill-bit radii.
    pub ring_width_bit_radii: f64,
    pub erode_px: usize,
    pub inner: HsvWindow,
    pub outer: HsvWindow,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            threshold_mm: 0.12,
            crop_margin_mm: 2.5,
            ring_width_bit_radii: 3.0,
            erode_px: 3,
            inner: HsvWindow {
                h_min: 15.0,
                h_max: 55.0,
                s_min: 0.35,
                s_max: 1.0,
                v_min: 0.5,
                v_max: 1.0,
            },
            outer: HsvWindow {
                h_min: 170.0,
                h_max: 210.0,
                s_min: 0.3,
                s_max: 1.0,
                v_min: 0.45,
                v_max: 1.0,
            },
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        require_positive("detector.threshold_mm", self.threshold_mm)?;
        require_positive("detector.crop_margin_mm", self.crop_margin_mm)?;
        crate::require_non_negative("detector.ring_width_bit_radii", self.ring_width_bit_radii)
    }
}

/// Detector settings resolved against a camera and drill path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub crop: CropRect,
    pub hsv: HsvConfig,
    pub threshold: f64,
}

impl DetectorConfig {
    pub fn for_scene(
        params: &DetectorParams,
        cam: &CameraModel,
        path: &DrillPath,
        bit_radius: f64,
    ) -> Result<Self, ConfigError> {
        params.validate()?;
        let crop = CropRect::around(cam, path.center, path.radius + params.crop_margin_mm)?;
        let (cc, cr) = cam.world_to_pixel(path.center);
        let ring = (params.ring_width_bit_radii > 0.0).then(|| RingMask {
            center_col: cc - crop.x as f64,
            center_row: cr - crop.y as f64,
            radius_px: path.radius / cam.mm_per_px,
            half_width_px: 0.5 * params.ring_width_bit_radii * bit_radius / cam.mm_per_px,
        });
        Ok(Self {
            crop,
            hsv: HsvConfig {
                inner: params.inner,
                outer: params.outer,
                erode_px: params.erode_px,
                ring,
            },
            threshold: params.threshold_mm,
        })
    }
}

/// Full pipeline on one synchronized frame pair.
pub fn detect(
    rgb: &RgbImage,
    depth: &DepthMap,
    reference: &InitialReference,
    cfg: &DetectorConfig,
) -> Result<DetachabilityReading, DetectError> {
    let labels = segment_frame(rgb, cfg)?;
    reading_with_labels(depth, reference, &labels, cfg)
}

fn segment_frame(rgb: &RgbImage, cfg: &DetectorConfig) -> Result<RegionLabels, DetectError> {
    if !cfg.crop.fits(rgb.width, rgb.height) {
        return Err(DetectorError::CropOutsideFrame {
            crop: cfg.crop,
            width: rgb.width,
            height: rgb.height,
        })
        .at(Stage::Crop);
    }
    segment(&cfg.crop.crop_rgb(rgb), &cfg.hsv).at(Stage::Segment)
}

fn reading_with_labels(
    depth: &DepthMap,
    reference: &InitialReference,
    labels: &RegionLabels,
    cfg: &DetectorConfig,
) -> Result<DetachabilityReading, DetectError> {
    let residual = subtract(depth, reference).at(Stage::Subtract)?;
    let mut reading = classify(&residual, labels, cfg.threshold).at(Stage::Classify)?;
    reading.timestamp = depth.timestamp;
    Ok(reading)
}

/// Streaming detector that reuses the segmentation while the colour frame is unchanged.
#[derive(Debug, Clone)]
pub struct Detector {
    pub cfg: DetectorConfig,
    reference: InitialReference,
    cache: Option<(u64, RegionLabels)>,
}

impl Detector {
    pub fn new(cfg: DetectorConfig, reference: InitialReference) -> Self {
        Self {
            cfg,
            reference,
            cache: None,
        }
    }

    pub fn reference(&self) -> &InitialReference {
        &self.reference
    }

    /// Replaces the initial reference.
    pub fn recapture(&mut self, depth: &DepthMap) -> Result<(), DetectorError> {
        self.reference = capture_initial(depth, self.cfg.crop)?;
        log::info!("initial reference re-captured at t={}", depth.timestamp);
        Ok(())
    }

    pub fn labels(&mut self, rgb: &RgbImage) -> Result<&RegionLabels, DetectError> {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        rgb.width.hash(&mut h);
        rgb.height.hash(&mut h);
        rgb.data.hash(&mut h);
        let key = h.finish();
        if self.cache.as_ref().map(|(k, _)| *k) != Some(key) {
            let labels = segment_frame(rgb, &self.cfg)?;
            self.cache = Some((key, labels));
        }
        Ok(&self.cache.as_ref().expect("cache filled above").1)
    }

    pub fn detect(&mut self, rgb: &RgbImage, depth: &DepthMap) -> Result<DetachabilityReading, DetectError> {
        self.labels(rgb)?;
        let labels = &self.cache.as_ref().expect("cache filled above").1;
        reading_with_labels(depth, &self.reference, labels, &self.cfg)
    }
}

/// Writes the offline timeline: `timestamp,mean_inner,mean_outer,delta,state`.
pub fn write_timeline<W: std::io::Write>(
    out: W,
    readings: &[DetachabilityReading],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "mean_inner", "mean_outer", "delta", "state"])?;
    for r in readings {
        w.write_record([
            format!("{:.6}", r.timestamp),
            format!("{:.6}", r.mean_inner),
            format!("{:.6}", r.mean_outer),
            format!("{:.6}", r.delta),
            r.state.code().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual_with(inner: f64, outer: f64) -> (ResidualMap, RegionLabels) {
        let data = vec![inner, inner, outer, outer, 9.0];
        let labels = vec![Label::Inner, Label::Inner, Label::Outer, Label::Outer, Label::Ignore];
        (
            ResidualMap {
                width: 5,
                height: 1,
                data,
            },
            RegionLabels {
                width: 5,
                height: 1,
                data: labels,
            },
        )
    }

    #[test]
    fn threshold_is_strict() {
        for (delta, want) in [
            (0.15, FlapState::Detachable),
            (0.12, FlapState::NonDetachable),
            (0.0, FlapState::NonDetachable),
            (-0.15, FlapState::Detachable),
        ] {
            let r = DetachabilityReading::from_means(delta, 0.0, 0.12, 0.0);
            assert_eq!(r.state, want, "delta {delta}");
        }
    }

    #[test]
    fn classify_uses_labelled_pixels_only() {
        let (res, labels) = residual_with(0.2, 0.0);
        let r = classify(&res, &labels, 0.12).unwrap();
        assert_eq!(r.mean_inner, 0.2);
        assert_eq!(r.mean_outer, 0.0);
        assert_eq!(r.state, FlapState::Detachable);
    }

    #[test]
    fn empty_region_is_error() {
        let (res, mut labels) = residual_with(0.2, 0.0);
        labels.data[0] = Label::Ignore;
        labels.data[1] = Label::Ignore;
        assert_eq!(
            classify(&res, &labels, 0.12),
            Err(DetectorError::EmptyRegion { region: Label::Inner })
        );
    }

    #[test]
    fn crop_outside_frame_rejected() {
        let depth = DepthMap {
            width: 10,
            height: 10,
            data: vec![1.0; 100],
            timestamp: 0.0,
        };
        let crop = CropRect {
            x: 5,
            y: 5,
            width: 6,
            height: 2,
        };
        assert!(capture_initial(&depth, crop).is_err());
        let ok = CropRect { width: 5, ..crop };
        let r = capture_initial(&depth, ok).unwrap();
        assert_eq!(r.depth.len(), 10);
    }

    #[test]
    fn subtract_identity_and_mismatch() {
        let depth = DepthMap {
            width: 4,
            height: 3,
            data: (0..12).map(|i| 500.0 + i as f64).collect(),
            timestamp: 0.0,
        };
        let crop = CropRect {
            x: 1,
            y: 1,
            width: 2,
            height: 2,
        };
        let r = capture_initial(&depth, crop).unwrap();
        assert!(subtract(&depth, &r).unwrap().data.iter().all(|&v| v == 0.0));
        let other = DepthMap {
            width: 5,
            ..depth.clone()
        };
        assert!(matches!(
            subtract(&other, &r),
            Err(DetectorError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn default_crop_covers_path() {
        let cam = CameraModel::default();
        let cfg =
            DetectorConfig::for_scene(&DetectorParams::default(), &cam, &DrillPath::default(), 0.25).unwrap();
        assert!(cfg.crop.fits(960, 540));
        assert!(cfg.crop.width >= 325 && cfg.crop.width <= 327);
        let ring = cfg.hsv.ring.unwrap();
        assert!((ring.radius_px - 100.0).abs() < 1e-9);
        assert!((ring.half_width_px - 9.375).abs() < 1e-9);
    }

    #[test]
    fn timeline_csv_header() {
        let mut buf = Vec::new();
        write_timeline(&mut buf, &[DetachabilityReading::from_means(0.2, 0.0, 0.12, 1.5)]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "timestamp,mean_inner,mean_outer,delta,state\n1.500000,0.200000,0.000000,0.200000,D\n"
        );
    }
}
