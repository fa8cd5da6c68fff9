//! Synthetic RGB-D renderer for the drilled specimen.

use super::{CameraModel, DepthMap, Hsv, RgbImage};
use crate::geom::Vec2;
use crate::rng::{self, Stream};
use crate::specimen::{DrillPath, SpecimenTruth};
use crate::ConfigError;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

/// Ground-truth region of a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Region {
    /// Flap interior, inside the groove.
    Flap = 0,
    /// Drilled groove under the bit footprint.
    Groove = 1,
    /// Shell body outside the groove.
    Body = 2,
}

#[derive(Debug, Clone, Copy)]
struct GrooveTap {
    pixel: u32,
    k0: u16,
    k1: u16,
    frac: f32,
}

/// Per-camera geometry cache; rendering many frames of one scene reuses it.
#[derive(Debug, Clone)]
pub struct Renderer {
    cam: CameraModel,
    path: DrillPath,
    regions: Vec<Region>,
    groove: Vec<GrooveTap>,
}

impl Renderer {
    pub fn new(cam: &CameraModel, path: &DrillPath, bit_radius: f64) -> Result<Self, ConfigError> {
        cam.validate()?;
        path.validate()?;
        cam.check_covers(path.center, path.radius + bit_radius)?;
        let n = path.sample_count;
        let step = std::f64::consts::TAU / n as f64;
        let mut regions = Vec::with_capacity(cam.width * cam.height);
        let mut groove = Vec::new();
        for row in 0..cam.height {
            for col in 0..cam.width {
                let q = cam.pixel_to_world(col as f64, row as f64) - path.center;
                let rho = q.norm();
                let region = if (rho - path.radius).abs() <= bit_radius {
                    let theta = q.y.atan2(q.x).rem_euclid(std::f64::consts::TAU);
                    let pos = theta / step;
                    let k0 = (pos.floor() as usize) % n;
                    groove.push(GrooveTap {
                        pixel: (row * cam.width + col) as u32,
                        k0: k0 as u16,
                        k1: ((k0 + 1) % n) as u16,
                        frac: (pos - pos.floor()) as f32,
                    });
                    Region::Groove
                } else if rho < path.radius {
                    Region::Flap
                } else {
                    Region::Body
                };
                regions.push(region);
            }
        }
        Ok(Self {
            cam: *cam,
            path: *path,
            regions,
            groove,
        })
    }

    pub fn camera(&self) -> &CameraModel {
        &self.cam
    }

    /// Ground-truth region map, row-major.
    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// Depth frame of the specimen's current state with noise drawn from `noise_seed`.
    pub fn render_depth(&self, spec: &SpecimenTruth, noise_seed: u64) -> DepthMap {
        let cam = &self.cam;
        let base = spec.surface_base_depth + cam.depth_bias;
        let mut data = vec![base; cam.width * cam.height];
        let tilt = spec.flap_tilt;
        let disp = spec.flap_displacement;
        if disp != 0.0 || tilt != Vec2::ZERO {
            let c = self.path.center;
            for row in 0..cam.height {
                let row_off = row * cam.width;
                for col in 0..cam.width {
                    if self.regions[row_off + col] == Region::Flap {
                        let q = cam.pixel_to_world(col as f64, row as f64);
                        data[row_off + col] += disp + tilt.dot(q - c);
                    }
                }
            }
        }
        for tap in &self.groove {
            let a = &spec.points[tap.k0 as usize];
            let b = &spec.points[tap.k1 as usize];
            let da = a.drilled_depth.min(a.thickness);
            let db = b.drilled_depth.min(b.thickness);
            let f = tap.frac as f64;
            data[tap.pixel as usize] += (1.0 - f) * da + f * db;
        }
        if cam.depth_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            for v in &mut data {
                *v += cam.depth_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        DepthMap {
            width: cam.width,
            height: cam.height,
            data,
            timestamp: 0.0,
        }
    }

    /// Colour frame; the texture depends only on the camera's texture seed.
    pub fn render_rgb(&self) -> RgbImage {
        let cam = &self.cam;
        let pal = &cam.palette;
        let mut rng = rng::stream(cam.texture_seed, Stream::Texture);
        let mut data = Vec::with_capacity(3 * self.regions.len());
        for &region in &self.regions {
            let base = match region {
                Region::Flap => pal.inner,
                Region::Groove => pal.groove,
                Region::Body => pal.outer,
            };
            let jitter = |rng: &mut ChaCha8Rng, a: f64| {
                if a > 0.0 {
                    rng.random_range(-a..=a)
                } else {
                    0.0
                }
            };
            let hsv = Hsv::new(
                base.h + jitter(&mut rng, pal.hue_jitter_deg),
                base.s + jitter(&mut rng, pal.sv_jitter),
                base.v + jitter(&mut rng, pal.sv_jitter),
            );
            data.extend_from_slice(&hsv.to_rgb());
        }
        RgbImage {
            width: cam.width,
            height: cam.height,
            data,
            timestamp: 0.0,
        }
    }
}

/// Noiseless depth offset of a pixel set, linear in the flap pose and groove depths.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStats {
    pub count: usize,
    pub flap_count: usize,
    /// Sum of flap pixel positions relative to the path centre (mm).
    pub flap_moment: Vec2,
    /// Per sample point, summed interpolation weight over groove pixels.
    pub groove_weights: Vec<f64>,
}

impl LinearStats {
    /// Mean of `depth - surface_base_depth - depth_bias` over the set, without noise.
    pub fn mean_offset(&self, spec: &SpecimenTruth) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let mut sum = self.flap_count as f64 * spec.flap_displacement + spec.flap_tilt.dot(self.flap_moment);
        for (w, p) in self.groove_weights.iter().zip(&spec.points) {
            if *w != 0.0 {
                sum += w * p.drilled_depth.min(p.thickness);
            }
        }
        sum / self.count as f64
    }
}

impl Renderer {
    /// Linear statistics over the pixels where `mask` is true (row-major, frame sized).
    pub fn linear_stats(&self, mask: &[bool]) -> LinearStats {
        assert_eq!(mask.len(), self.regions.len(), "mask size");
        let cam = &self.cam;
        let mut stats = LinearStats {
            count: 0,
            flap_count: 0,
            flap_moment: Vec2::ZERO,
            groove_weights: vec![0.0; self.path.sample_count],
        };
        for (i, (&m, region)) in mask.iter().zip(&self.regions).enumerate() {
            if !m {
                continue;
            }
            stats.count += 1;
            if *region == Region::Flap {
                let q = cam.pixel_to_world((i % cam.width) as f64, (i / cam.width) as f64);
                stats.flap_count += 1;
                stats.flap_moment = stats.flap_moment + (q - self.path.center);
            }
        }
        for tap in &self.groove {
            if mask[tap.pixel as usize] {
                let f = tap.frac as f64;
                stats.groove_weights[tap.k0 as usize] += 1.0 - f;
                stats.groove_weights[tap.k1 as usize] += f;
            }
        }
        stats
    }
}

/// Renders one RGB-D frame pair of `spec`.
pub fn render_rgbd(
    spec: &SpecimenTruth,
    cam: &CameraModel,
    noise_seed: u64,
) -> Result<(RgbImage, DepthMap), ConfigError> {
    let r = Renderer::new(cam, &spec.path, spec.bit_radius)?;
    Ok((r.render_rgb(), r.render_depth(spec, noise_seed)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specimen::{generate_specimen, SpecimenParams};

    fn spec() -> SpecimenTruth {
        generate_specimen(3, &SpecimenParams::default()).unwrap()
    }

    fn quiet() -> CameraModel {
        CameraModel {
            depth_sigma: 0.0,
            ..Default::default()
        }
    }

    fn region_means(r: &Renderer, d: &DepthMap) -> (f64, f64) {
        let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
        for (v, reg) in d.data.iter().zip(r.regions()) {
            match reg {
                Region::Flap => {
                    si += v;
                    ni += 1
                }
                Region::Body => {
                    so += v;
                    no += 1
                }
                Region::Groove => {}
            }
        }
        (si / ni as f64, so / no as f64)
    }

    #[test]
    fn undisturbed_frame_is_reference() {
        let s = spec();
        let (_, a) = render_rgbd(&s, &quiet(), 1).unwrap();
        let (_, b) = render_rgbd(&s, &quiet(), 2).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn uniform_displacement_shifts_inner_mean() {
        let mut s = spec();
        s.flap_displacement = 0.20;
        let r = Renderer::new(&quiet(), &s.path, s.bit_radius).unwrap();
        let d = r.render_depth(&s, 0);
        let (mi, mo) = region_means(&r, &d);
        assert!((mi - mo - 0.20).abs() < 1e-6, "{}", mi - mo);
    }

    #[test]
    fn depth_noise_std_over_inner_pixels() {
        let s = spec();
        let cam = CameraModel::default();
        let r = Renderer::new(&cam, &s.path, s.bit_radius).unwrap();
        let ideal = Renderer::new(&quiet(), &s.path, s.bit_radius).unwrap().render_depth(&s, 0);
        let d = r.render_depth(&s, 99);
        let diffs: Vec<f64> = d
            .data
            .iter()
            .zip(&ideal.data)
            .zip(r.regions())
            .filter(|(_, reg)| **reg == Region::Flap)
            .map(|((a, b), _)| a - b)
            .collect();
        assert!(diffs.len() >= 10_000);
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.018..=0.022).contains(&sd), "std {sd}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let s = spec();
        let cam = CameraModel::default();
        assert_eq!(render_rgbd(&s, &cam, 5).unwrap(), render_rgbd(&s, &cam, 5).unwrap());
    }

    #[test]
    fn groove_rendered_at_drilled_depth() {
        let mut s = spec();
        for p in &mut s.points {
            p.drilled_depth = 0.1;
        }
        let cam = quiet();
        let r = Renderer::new(&cam, &s.path, s.bit_radius).unwrap();
        let d = r.render_depth(&s, 0);
        let (c, row) = cam.world_to_pixel(Vec2::new(4.0, 0.0));
        let v = d.at(c.round() as usize, row.round() as usize);
        assert!((v - (500.0 + 0.10 + 0.1)).abs() < 1e-9, "{v}");
    }

    #[test]
    fn tilt_deepens_press_side() {
        let mut s = spec();
        for p in &mut s.points {
            p.drilled_depth = p.thickness;
        }
        s.apply_contact_force(Vec2::new(3.0, 0.0), 0.2);
        let cam = quiet();
        let r = Renderer::new(&cam, &s.path, s.bit_radius).unwrap();
        let d = r.render_depth(&s, 0);
        let at = |x: f64| {
            let (c, row) = cam.world_to_pixel(Vec2::new(x, 0.0));
            d.at(c.round() as usize, row.round() as usize) - 500.1
        };
        assert!(at(3.0) > at(0.0) && at(0.0) > at(-3.0));
        assert!((at(0.0) - 0.2 * 4.0 / 7.0).abs() < 0.002);
    }

    #[test]
    fn narrow_field_of_view_is_config_error() {
        let s = spec();
        let cam = CameraModel {
            width: 100,
            height: 100,
            ..Default::default()
        };
        assert!(render_rgbd(&s, &cam, 0).is_err());
    }

    #[test]
    fn linear_stats_match_rendered_mean() {
        let mut s = spec();
        for k in 0..32 {
            s.apply_drill_pass(k, 0.1 + 0.005 * k as f64);
        }
        s.apply_contact_force(Vec2::new(2.0, 1.0), 0.3);
        let r = Renderer::new(&quiet(), &s.path, s.bit_radius).unwrap();
        let d = r.render_depth(&s, 0);
        let mask: Vec<bool> = (0..d.data.len()).map(|i| (i / 7) % 3 != 0).collect();
        let st = r.linear_stats(&mask);
        let (mut sum, mut n) = (0.0, 0);
        for (v, m) in d.data.iter().zip(&mask) {
            if *m {
                sum += v - s.surface_base_depth - quiet().depth_bias;
                n += 1;
            }
        }
        assert_eq!(st.count, n);
        assert!((st.mean_offset(&s) - sum / n as f64).abs() < 1e-9);
    }
}
