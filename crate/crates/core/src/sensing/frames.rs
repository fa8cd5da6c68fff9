//! Frame dump and replay: 16-bit PGM depth, 8-bit PPM colour and a one-line sidecar.

use super::{DepthMap, RgbImage};
use image::{ImageBuffer, Luma, Rgb};
use std::fs;
use std::path::{Path, PathBuf};

/// Depth quantum of the dumped graymap (mm per count).
pub const DEPTH_UNIT_MM: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum FrameIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

/// Contents of the sidecar file.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMeta {
    pub timestamp: f64,
    pub seed: u64,
    pub trial_id: u64,
    /// Free-form tag such as `initial`, `palpation` or `exception`.
    pub role: String,
}

impl FrameMeta {
    fn to_line(&self) -> String {
        format!(
            "timestamp={} seed={} trial={} role={}\n",
            self.timestamp, self.seed, self.trial_id, self.role
        )
    }

    fn parse(line: &str) -> Result<Self, String> {
        let mut timestamp = None;
        let mut seed = None;
        let mut trial_id = None;
        let mut role = String::new();
        for field in line.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| format!("malformed field `{field}`"))?;
            match k {
                "timestamp" => timestamp = Some(v.parse::<f64>().map_err(|e| e.to_string())?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| e.to_string())?),
                "trial" => trial_id = Some(v.parse::<u64>().map_err(|e| e.to_string())?),
                "role" => role = v.to_string(),
                other => return Err(format!("unknown field `{other}`")),
            }
        }
        Ok(Self {
            timestamp: timestamp.ok_or("missing timestamp")?,
            seed: seed.ok_or("missing seed")?,
            trial_id: trial_id.ok_or("missing trial")?,
            role,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DumpedFrame {
    pub index: u64,
    pub meta: FrameMeta,
    pub rgb: RgbImage,
    pub depth: DepthMap,
}

fn stem(dir: &Path, index: u64) -> PathBuf {
    dir.join(format!("frame_{index:06}"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FrameIoError + '_ {
    move |source| FrameIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `frame_NNNNNN.{pgm,ppm,txt}` into `dir`.
pub fn write_frame(
    dir: &Path,
    index: u64,
    rgb: &RgbImage,
    depth: &DepthMap,
    meta: &FrameMeta,
) -> Result<(), FrameIoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let base = stem(dir, index);

    let counts: Vec<u16> = depth
        .data
        .iter()
        .map(|d| (d / DEPTH_UNIT_MM).round().clamp(0.0, u16::MAX as f64) as u16)
        .collect();
    let pgm = base.with_extension("pgm");
    let gray: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width as u32, depth.height as u32, counts).ok_or_else(|| {
            FrameIoError::Format {
                path: pgm.clone(),
                reason: "depth buffer size mismatch".into(),
            }
        })?;
    gray.save(&pgm).map_err(|source| FrameIoError::Image {
        path: pgm.clone(),
        source,
    })?;

    let ppm = base.with_extension("ppm");
    let color: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(rgb.width as u32, rgb.height as u32, rgb.data.clone()).ok_or_else(
            || FrameIoError::Format {
                path: ppm.clone(),
                reason: "rgb buffer size mismatch".into(),
            },
        )?;
    color.save(&ppm).map_err(|source| FrameIoError::Image {
        path: ppm.clone(),
        source,
    })?;

    let txt = base.with_extension("txt");
    fs::write(&txt, meta.to_line()).map_err(io_err(&txt))
}

/// Reads every dumped frame in `dir`, ordered by timestamp then index.
pub fn read_frames(dir: &Path) -> Result<Vec<DumpedFrame>, FrameIoError> {
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    let mut indices = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(num) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".txt"))
        {
            if let Ok(i) = num.parse::<u64>() {
                indices.push(i);
            }
        }
    }
    indices.sort_unstable();
    let mut frames = Vec::with_capacity(indices.len());
    for index in indices {
        frames.push(read_frame(dir, index)?);
    }
    frames.sort_by(|a, b| {
        a.meta
            .timestamp
            .total_cmp(&b.meta.timestamp)
            .then(a.index.cmp(&b.index))
    });
    Ok(frames)
}

fn read_frame(dir: &Path, index: u64) -> Result<DumpedFrame, FrameIoError> {
    let base = stem(dir, index);
    let txt = base.with_extension("txt");
    let line = fs::read_to_string(&txt).map_err(io_err(&txt))?;
    let meta = FrameMeta::parse(line.trim()).map_err(|reason| FrameIoError::Format {
        path: txt.clone(),
        reason,
    })?;

    let pgm = base.with_extension("pgm");
    let gray = image::open(&pgm)
        .map_err(|source| FrameIoError::Image {
            path: pgm.clone(),
            source,
        })?
        .into_luma16();
    let depth = DepthMap {
        width: gray.width() as usize,
        height: gray.height() as usize,
        data: gray.as_raw().iter().map(|&c| c as f64 * DEPTH_UNIT_MM).collect(),
        timestamp: meta.timestamp,
    };

    let ppm = base.with_extension("ppm");
    let color = image::open(&ppm)
        .map_err(|source| FrameIoError::Image {
            path: ppm.clone(),
            source,
        })?
        .into_rgb8();
    let rgb = RgbImage {
        width: color.width() as usize,
        height: color.height() as usize,
        data: color.into_raw(),
        timestamp: meta.timestamp,
    };
    if rgb.width != depth.width || rgb.height != depth.height {
        return Err(FrameIoError::Format {
            path: ppm,
            reason: "colour and depth dimensions differ".into(),
        });
    }
    Ok(DumpedFrame {
        index,
        meta,
        rgb,
        depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_quantises_depth() {
        let dir = tempfile::tempdir().unwrap();
        let depth = DepthMap {
            width: 3,
            height: 2,
            data: vec![500.1, 500.123, 500.0, 499.996, 0.0, 655.35],
            timestamp: 1.25,
        };
        let rgb = RgbImage {
            width: 3,
            height: 2,
            data: (0..18).map(|i| i as u8 * 10).collect(),
            timestamp: 1.25,
        };
        let meta = FrameMeta {
            timestamp: 1.25,
            seed: 7,
            trial_id: 3,
            role: "initial".into(),
        };
        write_frame(dir.path(), 4, &rgb, &depth, &meta).unwrap();
        let frames = read_frames(dir.path()).unwrap();
        assert_eq!(frames.len(), 1);
        let f = &frames[0];
        assert_eq!(f.meta, meta);
        assert_eq!(f.rgb.data, rgb.data);
        for (a, b) in f.depth.data.iter().zip(&depth.data) {
            assert!((a - b).abs() <= DEPTH_UNIT_MM / 2.0 + 1e-9, "{a} {b}");
        }
        assert_eq!(f.depth.timestamp, 1.25);
    }

    #[test]
    fn missing_directory_is_io_error() {
        let err = read_frames(Path::new("/nonexistent/frames")).unwrap_err();
        assert!(matches!(err, FrameIoError::Io { .. }));
    }

    #[test]
    fn sidecar_rejects_unknown_field() {
        assert!(FrameMeta::parse("timestamp=1 seed=2 trial=3 colour=blue").is_err());
    }
}
