//! HSV seeding and marker-based watershed flooding.

use super::{DetectorError, Label, RegionLabels};
use crate::sensing::{Hsv, RgbImage};
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Inclusive HSV box. A hue range with `h_min > h_max` wraps through 0 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HsvWindow {
    pub h_min: f64,
    pub h_max: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl HsvWindow {
    pub fn contains(&self, c: Hsv) -> bool {
        let hue_ok = if self.h_min <= self.h_max {
            c.h >= self.h_min && c.h <= self.h_max
        } else {
            c.h >= self.h_min || c.h <= self.h_max
        };
        hue_ok
            && c.s >= self.s_min
            && c.s <= self.s_max
            && c.v >= self.v_min
            && c.v <= self.v_max
    }
}

/// Annulus excluded from both regions, in crop pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingMask {
    pub center_col: f64,
    pub center_row: f64,
    pub radius_px: f64,
    pub half_width_px: f64,
}

impl RingMask {
    pub fn contains(&self, col: usize, row: usize) -> bool {
        let dx = col as f64 - self.center_col;
        let dy = row as f64 - self.center_row;
        (dx.hypot(dy) - self.radius_px).abs() <= self.half_width_px
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsvConfig {
    pub inner: HsvWindow,
    pub outer: HsvWindow,
    pub erode_px: usize,
    pub ring: Option<RingMask>,
}

/// Seed masks after thresholding, ring exclusion and erosion.
#[derive(Debug, Clone, PartialEq)]
pub struct Seeds {
    pub inner: Vec<bool>,
    pub outer: Vec<bool>,
}

fn blocked_mask(w: usize, h: usize, ring: Option<&RingMask>) -> Vec<bool> {
    let mut blocked = vec![false; w * h];
    if let Some(ring) = ring {
        for row in 0..h {
            for col in 0..w {
                blocked[row * w + col] = ring.contains(col, row);
            }
        }
    }
    blocked
}

/// Square erosion; pixels whose window leaves the image are dropped.
pub fn erode(mask: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    // summed-area table with a zero border row/column
    let stride = w + 1;
    let mut sat = vec![0u32; stride * (h + 1)];
    for row in 0..h {
        let mut run = 0u32;
        for col in 0..w {
            run += mask[row * w + col] as u32;
            sat[(row + 1) * stride + col + 1] = sat[row * stride + col + 1] + run;
        }
    }
    let side = 2 * radius + 1;
    let full = (side * side) as u32;
    let mut out = vec![false; w * h];
    if w < side || h < side {
        return out;
    }
    for row in radius..h - radius {
        for col in radius..w - radius {
            let (r0, r1) = (row - radius, row + radius + 1);
            let (c0, c1) = (col - radius, col + radius + 1);
            let sum = sat[r1 * stride + c1] + sat[r0 * stride + c0]
                - sat[r0 * stride + c1]
                - sat[r1 * stride + c0];
            out[row * w + col] = sum == full;
        }
    }
    out
}

pub fn seeds(rgb: &RgbImage, cfg: &HsvConfig) -> Seeds {
    let (w, h) = (rgb.width, rgb.height);
    let blocked = blocked_mask(w, h, cfg.ring.as_ref());
    let mut inner = vec![false; w * h];
    let mut outer = vec![false; w * h];
    for i in 0..w * h {
        if blocked[i] {
            continue;
        }
        let c = Hsv::from_rgb([rgb.data[3 * i], rgb.data[3 * i + 1], rgb.data[3 * i + 2]]);
        inner[i] = cfg.inner.contains(c);
        outer[i] = cfg.outer.contains(c);
    }
    // a pixel matching both windows is not a confident seed for either
    for i in 0..w * h {
        if inner[i] && outer[i] {
            inner[i] = false;
            outer[i] = false;
        }
    }
    Seeds {
        inner: erode(&inner, w, h, cfg.erode_px),
        outer: erode(&outer, w, h, cfg.erode_px),
    }
}

/// Sobel gradient magnitude summed over channels, in 1/8 intensity units.
pub fn gradient_magnitude(rgb: &RgbImage) -> Vec<u32> {
    let (w, h) = (rgb.width, rgb.height);
    let px = |c: isize, r: isize, ch: usize| -> i32 {
        let c = c.clamp(0, w as isize - 1) as usize;
        let r = r.clamp(0, h as isize - 1) as usize;
        rgb.data[3 * (r * w + c) + ch] as i32
    };
    let mut out = vec![0u32; w * h];
    for row in 0..h as isize {
        for col in 0..w as isize {
            let mut sq = 0.0f64;
            for ch in 0..3 {
                let gx = px(col + 1, row - 1, ch) + 2 * px(col + 1, row, ch) + px(col + 1, row + 1, ch)
                    - px(col - 1, row - 1, ch)
                    - 2 * px(col - 1, row, ch)
                    - px(col - 1, row + 1, ch);
                let gy = px(col - 1, row + 1, ch) + 2 * px(col, row + 1, ch) + px(col + 1, row + 1, ch)
                    - px(col - 1, row - 1, ch)
                    - 2 * px(col, row - 1, ch)
                    - px(col + 1, row - 1, ch);
                sq += (gx * gx + gy * gy) as f64;
            }
            out[row as usize * w + col as usize] = (sq.sqrt() * 8.0).round() as u32;
        }
    }
    out
}

const UNLABELED: u8 = 0;
const INNER: u8 = 1;
const OUTER: u8 = 2;
const BOUNDARY: u8 = 3;
const BLOCKED: u8 = 4;

fn neighbors(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (row, col) = (i / w, i % w);
    [
        (col > 0).then(|| i - 1),
        (col + 1 < w).then(|| i + 1),
        (row > 0).then(|| i - w),
        (row + 1 < h).then(|| i + w),
    ]
    .into_iter()
    .flatten()
}

/// Floods unlabeled pixels from the markers in order of gradient magnitude.
/// Pixels reached from both basins become boundary pixels; blocked pixels stay out.
fn flood(marks: &mut [u8], grad: &[u32], w: usize, h: usize) {
    let mut queued = vec![false; w * h];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for i in 0..w * h {
        if marks[i] == INNER || marks[i] == OUTER {
            for n in neighbors(i, w, h) {
                if marks[n] == UNLABELED && !queued[n] {
                    queued[n] = true;
                    heap.push(Reverse((grad[n], seq, n)));
                    seq += 1;
                }
            }
        }
    }
    while let Some(Reverse((_, _, i))) = heap.pop() {
        let mut seen = UNLABELED;
        let mut conflict = false;
        for n in neighbors(i, w, h) {
            let l = marks[n];
            if l == INNER || l == OUTER {
                if seen == UNLABELED {
                    seen = l;
                } else if seen != l {
                    conflict = true;
                }
            }
        }
        if conflict || seen == UNLABELED {
            marks[i] = BOUNDARY;
            continue;
        }
        marks[i] = seen;
        for n in neighbors(i, w, h) {
            if marks[n] == UNLABELED && !queued[n] {
                queued[n] = true;
                heap.push(Reverse((grad[n], seq, n)));
                seq += 1;
            }
        }
    }
}

/// Labels a cropped colour image into inner, outer and ignored pixels.
pub fn segment(rgb: &RgbImage, cfg: &HsvConfig) -> Result<RegionLabels, DetectorError> {
    let (w, h) = (rgb.width, rgb.height);
    let s = seeds(rgb, cfg);
    if !s.inner.iter().any(|&b| b) {
        return Err(DetectorError::EmptySeeds { region: Label::Inner });
    }
    if !s.outer.iter().any(|&b| b) {
        return Err(DetectorError::EmptySeeds { region: Label::Outer });
    }
    let blocked = blocked_mask(w, h, cfg.ring.as_ref());
    let mut marks: Vec<u8> = (0..w * h)
        .map(|i| {
            if blocked[i] {
                BLOCKED
            } else if s.inner[i] {
                INNER
            } else if s.outer[i] {
                OUTER
            } else {
                UNLABELED
            }
        })
        .collect();
    let grad = gradient_magnitude(rgb);
    flood(&mut marks, &grad, w, h);
    let data = marks
        .into_iter()
        .map(|m| match m {
            INNER => Label::Inner,
            OUTER => Label::Outer,
            _ => Label::Ignore,
        })
        .collect();
    Ok(RegionLabels {
        width: w,
        height: h,
        data,
    })
}
