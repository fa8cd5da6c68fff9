//! Trajectory planner: per-point depth updates through a multimodal velocity damper,
//! the closed constrained cubic spline through the 32 sample points, and the
//! finishing depths used once recognition is suspended.

use crate::geom::Vec2;
use crate::sensing::CompletionObservation;
use crate::specimen::DrillPath;
use crate::{require_non_negative, require_positive, ConfigError};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DamperParams {
    pub c_lo: f64,
    pub c_hi: f64,
    /// Depth gained per drilling cycle below `c_lo` (mm).
    pub v_full: f64,
    /// Depth gained per drilling cycle between `c_lo` and `c_hi` (mm).
    pub v_slow: f64,
    /// Duration of one drilling cycle (s).
    pub cycle_s: f64,
}

impl Default for DamperParams {
    fn default() -> Self {
        Self {
            c_lo: 0.5,
            c_hi: 0.95,
            v_full: 0.02,
            v_slow: 0.005,
            cycle_s: 60.0,
        }
    }
}

impl DamperParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.c_lo) || !(self.c_lo..=1.0).contains(&self.c_hi) {
            return Err(ConfigError::new(
                "damper.c_hi",
                "need 0 <= c_lo <= c_hi <= 1",
            ));
        }
        require_non_negative("damper.v_full", self.v_full)?;
        require_non_negative("damper.v_slow", self.v_slow)?;
        if self.v_slow > self.v_full {
            return Err(ConfigError::new("damper.v_slow", "must not exceed v_full"));
        }
        require_positive("damper.cycle_s", self.cycle_s)
    }
}

/// Depth increment for one point with observed `completion` over `dt` seconds.
pub fn damper_step(completion: f64, dt: f64, params: &DamperParams) -> f64 {
    let c = if completion.is_nan() {
        log::warn!("completion NaN treated as 0");
        0.0
    } else if !(0.0..=1.0).contains(&completion) {
        log::warn!("completion {completion} outside [0, 1], clamped");
        completion.clamp(0.0, 1.0)
    } else {
        completion
    };
    let v = if c < params.c_lo {
        params.v_full
    } else if c < params.c_hi {
        params.v_slow
    } else {
        0.0
    };
    v * dt.max(0.0) / params.cycle_s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePointPlan {
    pub index: usize,
    pub angle: f64,
    /// Commanded depth below the original surface (mm).
    pub z_command: f64,
    pub completion_estimate: f64,
}

/// Commanded depths for every sample point of a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub path: DrillPath,
    pub knots: Vec<SamplePointPlan>,
}

impl Plan {
    pub fn new(path: DrillPath) -> Self {
        let knots = (0..path.sample_count)
            .map(|index| SamplePointPlan {
                index,
                angle: path.sample_angle(index),
                z_command: 0.0,
                completion_estimate: 0.0,
            })
            .collect();
        Self { path, knots }
    }

    pub fn z(&self) -> Vec<f64> {
        self.knots.iter().map(|k| k.z_command).collect()
    }

    /// Applies one damper step per knot from an observation; returns the increments.
    pub fn update(&mut self, obs: &CompletionObservation, params: &DamperParams) -> Vec<f64> {
        assert_eq!(obs.levels.len(), self.knots.len(), "observation size");
        self.knots
            .iter_mut()
            .zip(&obs.levels)
            .map(|(k, &level)| {
                let dz = damper_step(level, params.cycle_s, params);
                k.z_command += dz;
                k.completion_estimate = level.clamp(0.0, 1.0);
                dz
            })
            .collect()
    }
}

/// Functional form of [`Plan::update`].
pub fn update_plan(plan: &Plan, obs: &CompletionObservation, params: &DamperParams) -> Plan {
    let mut next = plan.clone();
    next.update(obs, params);
    next
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlannerError {
    #[error("need at least 3 knots, got {0}")]
    TooFewKnots(usize),
    #[error("knot angles must be strictly increasing within one turn (knot {0})")]
    BadAngles(usize),
    #[error("non-finite knot value at knot {0}")]
    NonFinite(usize),
}

/// Closed drilling trajectory: periodic constrained cubic spline of depth over angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedTrajectory {
    pub path: DrillPath,
    pub knots: Vec<SamplePointPlan>,
    angles: Vec<f64>,
    z: Vec<f64>,
    slopes: Vec<f64>,
}

/// Constrained slope at a knot from its neighbouring secants: the harmonic mean
/// when both secants share a sign, zero at extrema and flats.
fn constrained_slope(left: f64, right: f64) -> f64 {
    if left * right > 0.0 {
        2.0 / (1.0 / left + 1.0 / right)
    } else {
        0.0
    }
}

pub fn build_spline(path: &DrillPath, knots: &[SamplePointPlan]) -> Result<ClosedTrajectory, PlannerError> {
    let n = knots.len();
    if n < 3 {
        return Err(PlannerError::TooFewKnots(n));
    }
    for (i, k) in knots.iter().enumerate() {
        if !k.angle.is_finite() || !k.z_command.is_finite() {
            return Err(PlannerError::NonFinite(i));
        }
    }
    for i in 1..n {
        if knots[i].angle <= knots[i - 1].angle {
            return Err(PlannerError::BadAngles(i));
        }
    }
    if knots[n - 1].angle - knots[0].angle >= TAU {
        return Err(PlannerError::BadAngles(n - 1));
    }
    let angles: Vec<f64> = knots.iter().map(|k| k.angle).collect();
    let z: Vec<f64> = knots.iter().map(|k| k.z_command).collect();
    let width = |i: usize| {
        if i + 1 < n {
            angles[i + 1] - angles[i]
        } else {
            angles[0] + TAU - angles[n - 1]
        }
    };
    let secant: Vec<f64> = (0..n).map(|i| (z[(i + 1) % n] - z[i]) / width(i)).collect();
    let slopes = (0..n)
        .map(|i| constrained_slope(secant[(i + n - 1) % n], secant[i]))
        .collect();
    Ok(ClosedTrajectory {
        path: *path,
        knots: knots.to_vec(),
        angles,
        z,
        slopes,
    })
}

impl ClosedTrajectory {
    fn locate(&self, theta: f64) -> (usize, f64, f64) {
        let n = self.angles.len();
        let t = (theta - self.angles[0]).rem_euclid(TAU) + self.angles[0];
        let i = self.angles.partition_point(|&a| a <= t).saturating_sub(1);
        let end = if i + 1 < n {
            self.angles[i + 1]
        } else {
            self.angles[0] + TAU
        };
        let h = end - self.angles[i];
        (i, ((t - self.angles[i]) / h).clamp(0.0, 1.0), h)
    }

    /// Depth and dz/dθ on segment `i` (knot `i` to the next) at local parameter `s` in [0, 1].
    pub fn eval_segment(&self, i: usize, s: f64) -> (f64, f64) {
        let n = self.angles.len();
        let j = (i + 1) % n;
        let h = if j != 0 {
            self.angles[j] - self.angles[i]
        } else {
            self.angles[0] + TAU - self.angles[i]
        };
        let s2 = s * s;
        let s3 = s2 * s;
        let z = (2.0 * s3 - 3.0 * s2 + 1.0) * self.z[i]
            + (s3 - 2.0 * s2 + s) * h * self.slopes[i]
            + (-2.0 * s3 + 3.0 * s2) * self.z[j]
            + (s3 - s2) * h * self.slopes[j];
        let dz = ((6.0 * s2 - 6.0 * s) * self.z[i]
            + (3.0 * s2 - 4.0 * s + 1.0) * h * self.slopes[i]
            + (-6.0 * s2 + 6.0 * s) * self.z[j]
            + (3.0 * s2 - 2.0 * s) * h * self.slopes[j])
            / h;
        (z, dz)
    }

    /// Depth at angle `theta` (any real value, taken modulo one turn).
    pub fn z_at(&self, theta: f64) -> f64 {
        let (i, s, _) = self.locate(theta);
        self.eval_segment(i, s).0
    }

    /// dz/dθ at `theta`.
    pub fn slope_at(&self, theta: f64) -> f64 {
        let (i, s, _) = self.locate(theta);
        self.eval_segment(i, s).1
    }

    pub fn segment_count(&self) -> usize {
        self.angles.len()
    }

    pub fn knot_slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// World position (x, y) and depth z at angle `theta`.
    pub fn point(&self, theta: f64) -> (Vec2, f64) {
        let xy = self.path.center + Vec2::from_polar(self.path.radius, theta);
        (xy, self.z_at(theta))
    }

    /// Writes `theta,x,y,z` at `samples` evenly spaced angles.
    pub fn write_csv<W: std::io::Write>(&self, out: W, samples: usize) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["theta", "x", "y", "z"])?;
        for i in 0..samples {
            let theta = TAU * i as f64 / samples as f64;
            let (xy, z) = self.point(theta);
            w.write_record([
                format!("{theta:.6}"),
                format!("{:.6}", xy.x),
                format!("{:.6}", xy.y),
                format!("{z:.6}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Finishing-depth model used from the completion gate onwards.
///
/// Each knot keeps a smoothed estimate of the material still to remove,
/// `(1 - level) * nominal_thickness`, advanced by the commanded increments between
/// observations. At the gate the finishing depth of a knot is its current command
/// plus that estimate; every further repeat round deepens it by `round_deepening`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinishingParams {
    /// Weight of the newest observation in the remaining-depth estimate.
    pub alpha: f64,
    /// Added to every finishing depth (mm).
    pub overcut: f64,
    /// Extra depth per additional repeat round (mm).
    pub round_deepening: f64,
    /// Maximum depth gained per repeat cycle (mm).
    pub feed_per_cycle: f64,
}

impl Default for FinishingParams {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            overcut: 0.0,
            round_deepening: 0.02,
            feed_per_cycle: 0.02,
        }
    }
}

impl FinishingParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(ConfigError::new("finishing.alpha", "must be in (0, 1]"));
        }
        require_non_negative("finishing.round_deepening", self.round_deepening)?;
        require_positive("finishing.feed_per_cycle", self.feed_per_cycle)?;
        if !self.overcut.is_finite() {
            return Err(ConfigError::new("finishing.overcut", "must be finite"));
        }
        Ok(())
    }
}

/// Smoothed per-knot remaining depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainingDepth {
    pub alpha: f64,
    pub nominal_thickness: f64,
    pub remaining: Option<Vec<f64>>,
}

impl RemainingDepth {
    pub fn new(alpha: f64, nominal_thickness: f64) -> Self {
        Self {
            alpha,
            nominal_thickness,
            remaining: None,
        }
    }

    pub fn observe(&mut self, levels: &[f64]) {
        let fresh = levels
            .iter()
            .map(|l| (1.0 - l.clamp(0.0, 1.0)) * self.nominal_thickness);
        self.remaining = Some(match self.remaining.take() {
            None => fresh.collect(),
            Some(prev) => fresh
                .zip(prev)
                .map(|(f, p)| self.alpha * f + (1.0 - self.alpha) * p)
                .collect(),
        });
    }

    pub fn advance(&mut self, increments: &[f64]) {
        if let Some(rem) = &mut self.remaining {
            for (r, dz) in rem.iter_mut().zip(increments) {
                *r = (*r - dz).max(0.0);
            }
        }
    }

    pub fn completion_estimate(&self, k: usize) -> f64 {
        match &self.remaining {
            Some(rem) => (1.0 - rem[k] / self.nominal_thickness).clamp(0.0, 1.0),
            None => 0.0,
        }
    }
}

/// Finishing depths frozen at the completion gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinishingPlan {
    pub base: Vec<f64>,
    pub params: FinishingParams,
}

impl FinishingPlan {
    pub fn at_gate(plan: &Plan, estimate: &RemainingDepth, params: FinishingParams) -> Self {
        let base = plan
            .knots
            .iter()
            .enumerate()
            .map(|(k, knot)| {
                let rem = estimate.remaining.as_ref().map_or(0.0, |r| r[k]);
                knot.z_command + rem + params.overcut
            })
            .collect();
        Self { base, params }
    }

    /// Target depth of knot `k` in repeat round `round` (0-based).
    pub fn target(&self, k: usize, round: u32) -> f64 {
        self.base[k] + round as f64 * self.params.round_deepening
    }

    /// Moves every knot toward its round target by at most one cycle's feed.
    /// Returns the increments and refreshes the completion estimates.
    pub fn step(&self, plan: &mut Plan, estimate: &mut RemainingDepth, round: u32) -> Vec<f64> {
        let feed = self.params.feed_per_cycle;
        let inc: Vec<f64> = plan
            .knots
            .iter_mut()
            .enumerate()
            .map(|(k, knot)| {
                let goal = self.target(k, round);
                let next = knot.z_command.max(goal.min(knot.z_command + feed));
                let dz = next - knot.z_command;
                knot.z_command = next;
                dz
            })
            .collect();
        estimate.advance(&inc);
        for (k, knot) in plan.knots.iter_mut().enumerate() {
            knot.completion_estimate = estimate.completion_estimate(k);
        }
        inc
    }
}
