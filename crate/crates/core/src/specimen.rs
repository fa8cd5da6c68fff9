//! Ground-truth eggshell model: drill path, per-point thickness and drilled depth,
//! elastic springback, membrane integrity and the flap contact mechanics.

use crate::geom::Vec2;
use crate::rng::{self, Stream};
use crate::{require_non_negative, require_positive, ConfigError, FlapState};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Smallest thickness a generated sample point may have (mm).
const MIN_THICKNESS: f64 = 0.01;

/// Circular drilling path with evenly spaced sample points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrillPath {
    pub center: Vec2,
    pub radius: f64,
    pub sample_count: usize,
}

impl Default for DrillPath {
    fn default() -> Self {
        Self {
            center: Vec2::ZERO,
            radius: 4.0,
            sample_count: 32,
        }
    }
}

impl DrillPath {
    pub fn validate(&self) -> Result<(), ConfigError> {
        require_positive("path.radius", self.radius)?;
        if self.sample_count < 4 {
            return Err(ConfigError::new("path.sample_count", "must be >= 4"));
        }
        Ok(())
    }

    pub fn sample_angle(&self, k: usize) -> f64 {
        std::f64::consts::TAU * k as f64 / self.sample_count as f64
    }

    pub fn sample_point(&self, k: usize) -> Vec2 {
        self.center + Vec2::from_polar(self.radius, self.sample_angle(k))
    }
}

/// Two-regime flap mechanics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactModel {
    /// Attached-flap stiffness per mm of total web (N/mm per mm).
    pub k_attached_per_mm: f64,
    /// Stiffness of a detached flap resting on the membrane (N/mm).
    pub k_free: f64,
    /// Force on a detached flap above which the membrane tears (N).
    pub membrane_force_limit: f64,
    /// Commanded depth beyond thickness that cuts the membrane (mm).
    pub membrane_overdrill_margin: f64,
    /// Web length at which flap motion and local indentation share the tip travel equally (mm).
    pub compliance_mm: f64,
}

impl Default for ContactModel {
    fn default() -> Self {
        Self {
            k_attached_per_mm: 2.0,
            k_free: 1.0,
            membrane_force_limit: 0.60,
            membrane_overdrill_margin: 0.10,
            compliance_mm: 0.00001,
        }
    }
}

impl ContactModel {
    pub fn validate(&self) -> Result<(), ConfigError> {
        require_positive("specimen.contact.k_attached_per_mm", self.k_attached_per_mm)?;
        require_positive("specimen.contact.k_free", self.k_free)?;
        require_positive("specimen.contact.membrane_force_limit", self.membrane_force_limit)?;
        require_positive(
            "specimen.contact.membrane_overdrill_margin",
            self.membrane_overdrill_margin,
        )?;
        require_positive("specimen.contact.compliance_mm", self.compliance_mm)
    }

    /// Split of tip travel beyond contact into (flap displacement, elastic indentation)
    /// for an attached flap with total web `web_total`.
    pub fn attached_split(&self, travel: f64, web_total: f64) -> (f64, f64) {
        let c = self.compliance_mm;
        let flap = travel * c / (web_total + c);
        (flap, travel - flap)
    }

    /// Plant stiffness dF/d(travel) for the given total web.
    pub fn stiffness(&self, web_total: f64) -> f64 {
        if web_total <= 0.0 {
            self.k_free
        } else {
            self.k_attached_per_mm * web_total * web_total / (web_total + self.compliance_mm)
        }
    }
}

/// Parameters for [`generate_specimen`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecimenParams {
    pub path: DrillPath,
    pub thickness_mean: f64,
    pub thickness_sigma: f64,
    pub springback_max: f64,
    pub bit_radius: f64,
    pub surface_base_depth: f64,
    pub forcible_web_limit: f64,
    pub contact: ContactModel,
}

impl Default for SpecimenParams {
    fn default() -> Self {
        Self {
            path: DrillPath::default(),
            thickness_mean: 0.35,
            thickness_sigma: 0.05,
            springback_max: 0.05,
            bit_radius: 0.25,
            surface_base_depth: 500.0,
            forcible_web_limit: 0.15,
            contact: ContactModel::default(),
        }
    }
}

impl SpecimenParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.path.validate()?;
        require_positive("specimen.thickness_mean", self.thickness_mean)?;
        require_non_negative("specimen.thickness_sigma", self.thickness_sigma)?;
        require_non_negative("specimen.springback_max", self.springback_max)?;
        require_positive("specimen.bit_radius", self.bit_radius)?;
        if self.bit_radius >= self.path.radius {
            return Err(ConfigError::new(
                "specimen.bit_radius",
                "must be smaller than the path radius",
            ));
        }
        require_positive("specimen.surface_base_depth", self.surface_base_depth)?;
        require_non_negative("specimen.forcible_web_limit", self.forcible_web_limit)?;
        self.contact.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePointTruth {
    pub index: usize,
    pub thickness: f64,
    pub drilled_depth: f64,
    pub springback: f64,
}

/// Webs thinner than this (mm) count as cut through.
pub const WEB_EPSILON: f64 = 1e-9;

impl SamplePointTruth {
    /// Residual attachment left under this point; anything below [`WEB_EPSILON`] is severed.
    pub fn web(&self) -> f64 {
        let w = self.thickness - self.drilled_depth;
        if w < WEB_EPSILON {
            0.0
        } else {
            w
        }
    }

    pub fn completion(&self) -> f64 {
        (self.drilled_depth / self.thickness).min(1.0)
    }
}

/// Why the membrane was damaged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MembraneDamage {
    OverDrill { index: usize, commanded_depth: f64 },
    PalpationForce { force: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecimenTruth {
    pub path: DrillPath,
    pub points: Vec<SamplePointTruth>,
    pub surface_base_depth: f64,
    pub membrane_intact: bool,
    /// Downward displacement of the flap at the path centre (mm).
    pub flap_displacement: f64,
    /// Gradient of the flap displacement field over the world plane.
    pub flap_tilt: Vec2,
    /// Displacement the flap keeps with nothing touching it (collapse).
    pub rest_sag: f64,
    pub bit_radius: f64,
    pub forcible_web_limit: f64,
    pub contact: ContactModel,
    pub damage: Option<MembraneDamage>,
}

pub fn generate_specimen(seed: u64, params: &SpecimenParams) -> Result<SpecimenTruth, ConfigError> {
    params.validate()?;
    let mut rng = rng::stream(seed, Stream::Specimen);
    let normal = Normal::new(params.thickness_mean, params.thickness_sigma)
        .map_err(|e| ConfigError::new("specimen.thickness_sigma", e.to_string()))?;
    let n = params.path.sample_count;
    let thickness: Vec<f64> = (0..n)
        .map(|_| normal.sample(&mut rng).max(MIN_THICKNESS))
        .collect();
    let points = thickness
        .into_iter()
        .enumerate()
        .map(|(index, thickness)| SamplePointTruth {
            index,
            thickness,
            drilled_depth: 0.0,
            springback: if params.springback_max > 0.0 {
                rng.random_range(0.0..=params.springback_max)
            } else {
                0.0
            },
        })
        .collect();
    Ok(SpecimenTruth {
        path: params.path,
        points,
        surface_base_depth: params.surface_base_depth,
        membrane_intact: true,
        flap_displacement: 0.0,
        flap_tilt: Vec2::ZERO,
        rest_sag: 0.0,
        bit_radius: params.bit_radius,
        forcible_web_limit: params.forcible_web_limit,
        contact: params.contact,
        damage: None,
    })
}

/// Outcome taxonomy of a finished trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaseLabel {
    /// Membrane intact and flap fully detached.
    Case1,
    /// Membrane damaged.
    Case2,
    /// Attached by a web thin enough to break by hand.
    Case3,
    /// Attached by more than the forcible limit.
    Case4,
}

impl CaseLabel {
    pub fn number(self) -> u8 {
        match self {
            CaseLabel::Case1 => 1,
            CaseLabel::Case2 => 2,
            CaseLabel::Case3 => 3,
            CaseLabel::Case4 => 4,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(CaseLabel::Case1),
            2 => Some(CaseLabel::Case2),
            3 => Some(CaseLabel::Case3),
            4 => Some(CaseLabel::Case4),
            _ => None,
        }
    }

    pub fn is_success(self) -> bool {
        matches!(self, CaseLabel::Case1 | CaseLabel::Case3)
    }
}

/// Case label from ground truth. A verdict of `Detachable` on a flap that still
/// has web is labelled by the web rule like a non-detachable verdict.
pub fn ground_truth_case(spec: &SpecimenTruth, _verdict: FlapState) -> CaseLabel {
    if !spec.membrane_intact {
        CaseLabel::Case2
    } else if spec.is_detachable() {
        CaseLabel::Case1
    } else if spec.web_total() <= spec.forcible_web_limit {
        CaseLabel::Case3
    } else {
        CaseLabel::Case4
    }
}

impl SpecimenTruth {
    pub fn web_total(&self) -> f64 {
        self.points.iter().map(SamplePointTruth::web).sum()
    }

    pub fn is_detachable(&self) -> bool {
        self.points.iter().all(|p| p.web() == 0.0)
    }

    pub fn true_completions(&self) -> Vec<f64> {
        self.points.iter().map(SamplePointTruth::completion).collect()
    }

    /// Removes material at sample point `k` for a pass commanded to `commanded_depth`.
    pub fn apply_drill_pass(&mut self, k: usize, commanded_depth: f64) {
        assert!(k < self.points.len(), "sample index {k} out of range");
        if commanded_depth <= 0.0 {
            return;
        }
        let margin = self.contact.membrane_overdrill_margin;
        let p = &mut self.points[k];
        p.drilled_depth = p.drilled_depth.max(commanded_depth - p.springback);
        if commanded_depth > p.thickness + margin + 1e-12 {
            self.damage_membrane(MembraneDamage::OverDrill {
                index: k,
                commanded_depth,
            });
        }
    }

    fn damage_membrane(&mut self, cause: MembraneDamage) {
        if self.membrane_intact {
            self.membrane_intact = false;
            self.damage = Some(cause);
        }
    }

    /// Severs every web and lets the flap drop by `sag` (fault injection).
    pub fn collapse(&mut self, sag: f64) {
        for p in &mut self.points {
            p.drilled_depth = p.drilled_depth.max(p.thickness);
        }
        self.rest_sag = sag.max(0.0);
        self.flap_displacement = self.rest_sag;
        self.flap_tilt = Vec2::ZERO;
    }

    /// Downward displacement of the flap surface at world point `q`.
    pub fn flap_offset_at(&self, q: Vec2) -> f64 {
        self.flap_displacement + self.flap_tilt.dot(q - self.path.center)
    }

    /// Contact force for a tip pressing at `point` with its end `tip_depth` below the
    /// original surface. Updates the flap pose and, for a detached flap, the membrane.
    pub fn apply_contact_force(&mut self, point: Vec2, tip_depth: f64) -> f64 {
        let travel = tip_depth - self.rest_sag;
        if travel <= 0.0 {
            self.flap_displacement = self.rest_sag;
            self.flap_tilt = Vec2::ZERO;
            return 0.0;
        }
        let web = self.web_total();
        let (press, force) = if web == 0.0 {
            (travel, self.contact.k_free * travel)
        } else {
            let (flap, indentation) = self.contact.attached_split(travel, web);
            (flap, self.contact.k_attached_per_mm * web * indentation)
        };
        self.set_pressed_pose(point, press);
        if web == 0.0 && force > self.contact.membrane_force_limit {
            self.damage_membrane(MembraneDamage::PalpationForce { force });
        }
        force
    }

    /// Planar tilt about the path point opposite `point`, with `press` at `point`.
    fn set_pressed_pose(&mut self, point: Vec2, press: f64) {
        let offset = point - self.path.center;
        let dist = offset.norm();
        let r = self.path.radius;
        if dist < 1e-12 {
            self.flap_displacement = self.rest_sag + press;
            self.flap_tilt = Vec2::ZERO;
            return;
        }
        let u = offset * (1.0 / dist);
        let lever = dist + r;
        self.flap_displacement = self.rest_sag + press * r / lever;
        self.flap_tilt = u * (press / lever);
    }

    /// Plain-text dump, one line per sample point:
    /// `index thickness drilled_depth web springback`.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let _ = writeln!(
                out,
                "{} {:.6} {:.6} {:.6} {:.6}",
                p.index,
                p.thickness,
                p.drilled_depth,
                p.web(),
                p.springback
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(thickness: f64, springback: f64) -> SpecimenTruth {
        let mut s = generate_specimen(
            1,
            &SpecimenParams {
                thickness_sigma: 0.0,
                thickness_mean: thickness,
                springback_max: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        for p in &mut s.points {
            p.springback = springback;
        }
        s
    }

    #[test]
    fn zero_sigma_gives_exact_mean() {
        let s = flat(0.35, 0.0);
        assert_eq!(s.points.len(), 32);
        assert!(s.points.iter().all(|p| p.thickness == 0.35));
    }

    #[test]
    fn generation_is_deterministic() {
        let p = SpecimenParams::default();
        assert_eq!(generate_specimen(11, &p).unwrap(), generate_specimen(11, &p).unwrap());
        assert_ne!(generate_specimen(11, &p).unwrap(), generate_specimen(12, &p).unwrap());
    }

    #[test]
    fn seed_seven_mean_regression() {
        let s = generate_specimen(7, &SpecimenParams::default()).unwrap();
        let mean = s.points.iter().map(|p| p.thickness).sum::<f64>() / 32.0;
        assert!((mean - 0.35).abs() <= 0.03, "mean {mean}");
        assert!((mean - SEED7_MEAN).abs() < 1e-12, "mean {mean}");
    }

    // Pinned from the first run of this generator.
    const SEED7_MEAN: f64 = 0.34843189517112566;

    #[test]
    fn springback_within_bounds() {
        let s = generate_specimen(3, &SpecimenParams::default()).unwrap();
        assert!(s.points.iter().all(|p| (0.0..=0.05).contains(&p.springback)));
    }

    #[test]
    fn non_positive_thickness_is_config_error() {
        let p = SpecimenParams {
            thickness_mean: 0.0,
            ..Default::default()
        };
        let e = generate_specimen(1, &p).unwrap_err();
        assert_eq!(e.key, "specimen.thickness_mean");
        let p = SpecimenParams {
            thickness_sigma: -0.1,
            ..Default::default()
        };
        assert!(generate_specimen(1, &p).is_err());
    }

    #[test]
    fn zero_command_is_noop() {
        let mut s = flat(0.35, 0.03);
        let before = s.clone();
        s.apply_drill_pass(5, 0.0);
        assert_eq!(s, before);
    }

    #[test]
    fn springback_leaves_web() {
        let mut s = flat(0.35, 0.03);
        s.apply_drill_pass(0, 0.35);
        assert!((s.points[0].web() - 0.03).abs() < 1e-12);
        assert!(s.membrane_intact);
    }

    #[test]
    fn overdrill_damages_membrane() {
        let mut s = flat(0.35, 0.0);
        s.apply_drill_pass(0, 0.45);
        assert!(s.membrane_intact, "0.45 is not beyond 0.35 + 0.10");
        s.apply_drill_pass(0, 0.46);
        assert!(!s.membrane_intact);
        assert!(matches!(s.damage, Some(MembraneDamage::OverDrill { index: 0, .. })));
    }

    #[test]
    fn full_depth_without_springback_detaches() {
        let mut s = flat(0.35, 0.0);
        for k in 0..32 {
            s.apply_drill_pass(k, 0.35);
        }
        assert!(s.is_detachable());
        assert_eq!(s.web_total(), 0.0);
    }

    #[test]
    fn no_contact_above_surface() {
        let mut s = flat(0.35, 0.0);
        let f = s.apply_contact_force(Vec2::new(3.0, 0.0), -0.1);
        assert_eq!(f, 0.0);
        assert_eq!(s.flap_displacement, 0.0);
    }

    #[test]
    fn detached_flap_is_linear_spring() {
        let mut s = flat(0.35, 0.0);
        for k in 0..32 {
            s.apply_drill_pass(k, 0.35);
        }
        let f = s.apply_contact_force(Vec2::new(3.0, 0.0), 0.20);
        assert!((f - 0.20).abs() < 1e-12);
        // press point moves with the tip
        assert!((s.flap_offset_at(Vec2::new(3.0, 0.0)) - 0.20).abs() < 1e-12);
        // centre moves r / (|p| + r) of that
        assert!((s.flap_displacement - 0.20 * 4.0 / 7.0).abs() < 1e-12);
        // the opposite path point is the pivot
        assert!(s.flap_offset_at(Vec2::new(-4.0, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn attached_flap_pinned_example() {
        let mut s = flat(0.35, 0.0);
        for k in 0..32 {
            s.apply_drill_pass(k, 0.25);
        }
        assert!((s.web_total() - 3.2).abs() < 1e-9);
        // travel that yields an elastic indentation of exactly 0.05 mm
        let c = s.contact.compliance_mm;
        let travel = 0.05 * (3.2 + c) / 3.2;
        let f = s.apply_contact_force(Vec2::new(3.0, 0.0), travel);
        assert!((f - 0.32).abs() < 1e-9, "force {f}");
        let press = s.flap_offset_at(Vec2::new(3.0, 0.0));
        assert!(press < 0.02);
        assert!((press - ATTACHED_PRESS_3_2).abs() < 1e-12, "press {press}");
    }

    // 0.05 * c / W with c = 0.00001, W = 3.2
    const ATTACHED_PRESS_3_2: f64 = 0.05 * 0.00001 / 3.2;

    #[test]
    fn palpating_detached_flap_too_hard_tears_membrane() {
        let mut s = flat(0.35, 0.0);
        for k in 0..32 {
            s.apply_drill_pass(k, 0.35);
        }
        s.apply_contact_force(Vec2::new(3.0, 0.0), 0.6);
        assert!(s.membrane_intact, "0.6 N is not above the limit");
        s.apply_contact_force(Vec2::new(3.0, 0.0), 0.61);
        assert!(!s.membrane_intact);
    }

    #[test]
    fn case_labels() {
        let mut s = flat(0.35, 0.0);
        for k in 0..32 {
            s.apply_drill_pass(k, 0.35);
        }
        assert_eq!(ground_truth_case(&s, FlapState::Detachable), CaseLabel::Case1);
        let mut thin = flat(0.35, 0.0);
        for k in 0..32 {
            thin.apply_drill_pass(k, 0.35);
        }
        thin.points[4].drilled_depth = 0.27;
        assert_eq!(ground_truth_case(&thin, FlapState::NonDetachable), CaseLabel::Case3);
        assert!(CaseLabel::Case3.is_success());
        thin.points[5].drilled_depth = 0.27;
        assert_eq!(ground_truth_case(&thin, FlapState::NonDetachable), CaseLabel::Case4);
        thin.apply_drill_pass(0, 0.5);
        assert_eq!(ground_truth_case(&thin, FlapState::NonDetachable), CaseLabel::Case2);
        assert!(!CaseLabel::Case2.is_success());
    }

    #[test]
    fn dump_has_one_line_per_point() {
        let s = flat(0.35, 0.01);
        let dump = s.debug_dump();
        assert_eq!(dump.lines().count(), 32);
        assert_eq!(dump.lines().next().unwrap(), "0 0.350000 0.000000 0.350000 0.010000");
    }
}
