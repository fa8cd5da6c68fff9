//! Safe palpation: press four strategic points on the flap with the drill bit under a
//! force guard while the deflection detector watches, then apply the 3-of-4 rule.

use crate::detector::DetachabilityReading;
use crate::geom::{Vec2, Vec3};
use crate::sensing::ForceReading;
use crate::specimen::DrillPath;
use crate::time::{Tick, FORCE_PERIOD, FRAME_PERIOD, TICKS_PER_SECOND};
use crate::trajectory::SamplePointPlan;
use crate::{require_non_negative, require_positive, ConfigError, FlapState};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToolState {
    Idle,
    Descending,
    Retracting,
    Drilling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrillTool {
    /// Tip position; z is up and the original surface is z = 0.
    pub tip_position: Vec3,
    /// Signed vertical velocity (mm/s), negative when descending.
    pub descent_velocity: f64,
    pub state: ToolState,
}

impl DrillTool {
    pub fn parked(at: Vec2, height: f64) -> Self {
        Self {
            tip_position: Vec3::new(at.x, at.y, height),
            descent_velocity: 0.0,
            state: ToolState::Idle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuardParams {
    /// Safe contact force (N).
    pub force_max: f64,
    /// The guard trips this many sensor sigmas below `force_max`.
    pub noise_margin_sigmas: f64,
    /// Descent speed (mm/s, magnitude).
    pub v_z: f64,
    pub max_speed: f64,
    /// Deepest tip position below the original surface (mm).
    pub travel_limit: f64,
    /// Safe height above the original surface between points (mm).
    pub retract_height: f64,
    /// Height above the surface where the guarded descent starts (mm).
    pub approach_clearance: f64,
    /// Speed of free moves (mm/s).
    pub rapid_speed: f64,
    /// Time to move between points at safe height (s).
    pub transit_s: f64,
    /// Contact onset: first sample with |F| above this many sensor sigmas.
    pub contact_sigmas: f64,
    /// Frames that may be missed before the palpation is aborted.
    pub stall_frames: u64,
    /// Strategic point distance from the centre as a fraction of the path radius.
    pub radius_fraction: f64,
}

impl Default for GuardParams {
    fn default() -> Self {
        Self {
            force_max: 0.40,
            noise_margin_sigmas: 3.0,
            v_z: 0.05,
            max_speed: 0.1,
            travel_limit: 1.0,
            retract_height: 2.0,
            approach_clearance: 1.0,
            rapid_speed: 1.0,
            transit_s: 20.0,
            contact_sigmas: 3.0,
            stall_frames: 3,
            radius_fraction: 0.75,
        }
    }
}

impl GuardParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        require_positive("palpation.force_max", self.force_max)?;
        require_non_negative("palpation.noise_margin_sigmas", self.noise_margin_sigmas)?;
        require_positive("palpation.v_z", self.v_z)?;
        if self.v_z > self.max_speed {
            return Err(ConfigError::new("palpation.v_z", "exceeds palpation.max_speed"));
        }
        require_positive("palpation.travel_limit", self.travel_limit)?;
        require_non_negative("palpation.approach_clearance", self.approach_clearance)?;
        if self.retract_height < self.approach_clearance {
            return Err(ConfigError::new(
                "palpation.retract_height",
                "must be at least approach_clearance",
            ));
        }
        require_positive("palpation.rapid_speed", self.rapid_speed)?;
        require_non_negative("palpation.transit_s", self.transit_s)?;
        require_non_negative("palpation.contact_sigmas", self.contact_sigmas)?;
        if !(0.6..=0.9).contains(&self.radius_fraction) {
            return Err(ConfigError::new(
                "palpation.radius_fraction",
                "must lie in [0.6, 0.9]",
            ));
        }
        Ok(())
    }

    /// Measured |F| at which the descent halts.
    pub fn trip_level(&self, force_sigma: f64) -> f64 {
        self.force_max - self.noise_margin_sigmas * force_sigma
    }

    /// One-sample overshoot bound on the plant force for a plant of stiffness `k_max`.
    pub fn overshoot_bound(&self, k_max: f64) -> f64 {
        self.force_max + k_max * self.v_z * FORCE_PERIOD as f64 / TICKS_PER_SECOND as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategicPoint {
    pub position: Vec2,
    pub source_index: usize,
}

/// Highest completion estimate per quadrant, moved radially inward to
/// `radius_fraction` of the path radius. Ties go to the lower index.
pub fn select_strategic_points(
    plan: &[SamplePointPlan],
    path: &DrillPath,
    radius_fraction: f64,
) -> [StrategicPoint; 4] {
    let mut best: [Option<&SamplePointPlan>; 4] = [None; 4];
    for knot in plan {
        let q = ((knot.angle.rem_euclid(std::f64::consts::TAU) / std::f64::consts::FRAC_PI_2) as usize).min(3);
        match best[q] {
            Some(b) if b.completion_estimate >= knot.completion_estimate => {}
            _ => best[q] = Some(knot),
        }
    }
    std::array::from_fn(|q| {
        let (index, angle) = match best[q] {
            Some(k) => (k.index, k.angle),
            None => {
                // empty quadrant: use its bisector
                let angle = (q as f64 + 0.5) * std::f64::consts::FRAC_PI_2;
                let k = ((angle / std::f64::consts::TAU * path.sample_count as f64).round() as usize)
                    % path.sample_count;
                (k, angle)
            }
        };
        StrategicPoint {
            position: path.center + Vec2::from_polar(radius_fraction * path.radius, angle),
            source_index: index,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExitReason {
    /// The detector reported deflection below the force limit.
    Deflection,
    /// The force guard tripped.
    ForceLimit,
    /// The travel limit was reached; `contact` is false when no force was ever felt.
    TravelLimit { contact: bool },
}

/// One force-sample step of a palpation trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub timestamp: f64,
    pub tip_z: f64,
    pub f_z: f64,
    pub plant_f_z: f64,
    pub delta: f64,
    pub state: FlapState,
    /// Tool velocity after this step.
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPalpationResult {
    pub point: StrategicPoint,
    pub verdict: FlapState,
    pub exit: ExitReason,
    /// Largest measured |F| (N).
    pub peak_force: f64,
    /// Largest noiseless contact force (N).
    pub peak_plant_force: f64,
    pub peak_delta: f64,
    pub duration: f64,
    pub contact_detected: bool,
    /// Highest plant stiffness seen during the press (N/mm).
    pub stiffness: f64,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlapVerdict {
    pub per_point: Vec<PointPalpationResult>,
    pub detachable_count: usize,
    pub final_state: FlapState,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PalpationError {
    #[error("no camera frame for {missed} frame periods at t={at:.3} s")]
    SensorStall { at: f64, missed: u64 },
}

/// What the palpation loop needs from the cell: one clock, the force stream and
/// the detector stream.
pub trait Rig {
    fn now(&self) -> Tick;
    /// Lets time pass with the tool out of contact.
    fn wait_until(&mut self, t: Tick);
    /// Force sample at the current instant with the tool at `tool`.
    fn sample_force(&mut self, tool: &DrillTool) -> ForceReading;
    /// Detector reading for the frame at the current instant, `None` if no frame arrived.
    fn frame(&mut self) -> Option<DetachabilityReading>;
    /// Tool has left the surface; the flap returns to rest.
    fn release(&mut self);
    fn force_sigma(&self) -> f64;
    /// Plant stiffness at the current contact state (N/mm).
    fn plant_stiffness(&self) -> f64;
}

fn ticks(seconds: f64) -> Tick {
    Tick::from_seconds_ceil(seconds)
}

/// Presses one strategic point and returns its verdict.
pub fn palpate_point<R: Rig + ?Sized>(
    rig: &mut R,
    point: &StrategicPoint,
    guard: &GuardParams,
) -> Result<PointPalpationResult, PalpationError> {
    let start = rig.now();
    let mut tool = DrillTool::parked(point.position, guard.retract_height);

    rig.wait_until(start + ticks(guard.transit_s));
    let approach = (guard.retract_height - guard.approach_clearance) / guard.rapid_speed;
    rig.wait_until(rig.now() + ticks(approach));

    let trip = guard.trip_level(rig.force_sigma());
    let contact_level = guard.contact_sigmas * rig.force_sigma();
    let z0 = guard.approach_clearance;
    let t0 = rig.now();
    tool.tip_position.z = z0;
    tool.state = ToolState::Descending;
    tool.descent_velocity = -guard.v_z;

    let mut trace = Vec::new();
    let mut last_f = 0.0f64;
    let mut last_reading: Option<DetachabilityReading> = None;
    let mut last_frame = t0;
    let mut peak_force = 0.0f64;
    let mut peak_plant = 0.0f64;
    let mut peak_delta = 0.0f64;
    let mut stiffness = 0.0f64;
    let mut contact = false;
    let mut t = t0;

    let exit = loop {
        let next_force = Tick(t.0 + 1).next_multiple(FORCE_PERIOD);
        let next_frame = Tick(t.0 + 1).next_multiple(FRAME_PERIOD);
        t = next_force.min(next_frame);
        rig.wait_until(t);

        if t.0 % FORCE_PERIOD == 0 {
            let z = (z0 - guard.v_z * (t - t0).seconds()).max(-guard.travel_limit);
            tool.tip_position.z = z;
            let r = rig.sample_force(&tool);
            last_f = r.sample.f_z;
            peak_force = peak_force.max(last_f.abs());
            peak_plant = peak_plant.max(r.plant.abs());
            stiffness = stiffness.max(rig.plant_stiffness());
            if last_f.abs() > contact_level {
                contact = true;
            }
            let tripped = last_f.abs() >= trip;
            let bottomed = z <= -guard.travel_limit;
            if tripped || bottomed {
                tool.descent_velocity = 0.0;
                tool.state = ToolState::Retracting;
            }
            trace.push(TraceRow {
                timestamp: t.seconds(),
                tip_z: z,
                f_z: last_f,
                plant_f_z: r.plant,
                delta: last_reading.map_or(0.0, |r| r.delta),
                state: last_reading.map_or(FlapState::NonDetachable, |r| r.state),
                velocity: tool.descent_velocity,
            });
            if tripped {
                break ExitReason::ForceLimit;
            }
            if bottomed {
                break ExitReason::TravelLimit { contact };
            }
        }

        if t.0 % FRAME_PERIOD == 0 {
            match rig.frame() {
                Some(reading) => {
                    last_frame = t;
                    peak_delta = peak_delta.max(reading.delta.abs());
                    last_reading = Some(reading);
                    if reading.state == FlapState::Detachable && last_f.abs() < guard.force_max {
                        tool.descent_velocity = 0.0;
                        tool.state = ToolState::Retracting;
                        break ExitReason::Deflection;
                    }
                }
                None => {
                    let missed = (t - last_frame).0 / FRAME_PERIOD;
                    if missed > guard.stall_frames {
                        rig.release();
                        return Err(PalpationError::SensorStall {
                            at: t.seconds(),
                            missed,
                        });
                    }
                }
            }
        }
    };

    rig.release();
    let climb = (guard.retract_height - tool.tip_position.z) / guard.rapid_speed;
    rig.wait_until(rig.now() + ticks(climb));
    let verdict = match exit {
        ExitReason::Deflection => FlapState::Detachable,
        _ => FlapState::NonDetachable,
    };
    Ok(PointPalpationResult {
        point: *point,
        verdict,
        exit,
        peak_force,
        peak_plant_force: peak_plant,
        peak_delta,
        duration: (rig.now() - start).seconds(),
        contact_detected: contact,
        stiffness,
        trace,
    })
}

/// The 3-of-4 decision over whatever verdicts were collected.
pub fn flap_decision(verdicts: &[FlapState]) -> FlapState {
    if verdicts.iter().filter(|v| v.is_detachable()).count() >= 3 {
        FlapState::Detachable
    } else {
        FlapState::NonDetachable
    }
}

/// Outcome already fixed by a prefix of at most four verdicts.
pub fn decided_early(prefix: &[FlapState]) -> Option<FlapState> {
    let d = prefix.iter().filter(|v| v.is_detachable()).count();
    let n = prefix.len() - d;
    if d >= 3 {
        Some(FlapState::Detachable)
    } else if n >= 2 || prefix.len() >= 4 {
        Some(FlapState::NonDetachable)
    } else {
        None
    }
}

/// Palpates the points in order, stopping once the 3-of-4 outcome is decided.
pub fn palpate_flap<R: Rig + ?Sized>(
    rig: &mut R,
    points: &[StrategicPoint; 4],
    guard: &GuardParams,
) -> Result<FlapVerdict, PalpationError> {
    let mut per_point = Vec::with_capacity(4);
    let mut verdicts = Vec::with_capacity(4);
    for p in points {
        let r = palpate_point(rig, p, guard)?;
        verdicts.push(r.verdict);
        per_point.push(r);
        if decided_early(&verdicts).is_some() {
            break;
        }
    }
    Ok(FlapVerdict {
        detachable_count: verdicts.iter().filter(|v| v.is_detachable()).count(),
        final_state: flap_decision(&verdicts),
        per_point,
    })
}

/// Writes a per-point trace: `timestamp,tip_z,f_z,delta,state,plant_f_z`.
pub fn write_trace<W: std::io::Write>(out: W, rows: &[TraceRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "tip_z", "f_z", "delta", "state", "plant_f_z"])?;
    for r in rows {
        w.write_record([
            format!("{:.7}", r.timestamp),
            format!("{:.6}", r.tip_z),
            format!("{:.6}", r.f_z),
            format!("{:.6}", r.delta),
            r.state.code().to_string(),
            format!("{:.6}", r.plant_f_z),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::ForceSensor;
    use crate::specimen::{generate_specimen, SpecimenParams, SpecimenTruth};
    use FlapState::{Detachable as D, NonDetachable as N};

    /// Rig whose detector reads the flap displacement at the centre directly.
    struct Bench {
        now: Tick,
        spec: SpecimenTruth,
        sensor: ForceSensor,
        drop_frames: bool,
    }

    impl Rig for Bench {
        fn now(&self) -> Tick {
            self.now
        }
        fn wait_until(&mut self, t: Tick) {
            assert!(t >= self.now);
            self.now = t;
        }
        fn sample_force(&mut self, tool: &DrillTool) -> ForceReading {
            crate::sensing::sample_force(&mut self.spec, tool, &mut self.sensor, self.now.seconds())
        }
        fn frame(&mut self) -> Option<DetachabilityReading> {
            if self.drop_frames {
                return None;
            }
            Some(DetachabilityReading::from_means(
                self.spec.flap_displacement - self.spec.rest_sag,
                0.0,
                0.12,
                self.now.seconds(),
            ))
        }
        fn release(&mut self) {
            self.spec.apply_contact_force(Vec2::ZERO, -1.0);
        }
        fn force_sigma(&self) -> f64 {
            self.sensor.sigma
        }
        fn plant_stiffness(&self) -> f64 {
            self.spec.contact.stiffness(self.spec.web_total())
        }
    }

    fn bench(completion: f64, sigma: f64) -> Bench {
        let mut spec = generate_specimen(
            5,
            &SpecimenParams {
                thickness_sigma: 0.0,
                springback_max: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        for k in 0..32 {
            let t = spec.points[k].thickness;
            spec.apply_drill_pass(k, completion * t);
        }
        Bench {
            now: Tick(0),
            spec,
            sensor: ForceSensor::new(sigma, 1),
            drop_frames: false,
        }
    }

    fn point() -> StrategicPoint {
        StrategicPoint {
            position: Vec2::new(3.0, 0.0),
            source_index: 0,
        }
    }

    #[test]
    fn detachable_flap_reads_detachable() {
        let mut b = bench(1.0, 0.01);
        let r = palpate_point(&mut b, &point(), &GuardParams::default()).unwrap();
        assert_eq!(r.verdict, D);
        assert!(r.peak_force < 0.40);
        assert!(r.contact_detected);
        assert_eq!(b.spec.flap_displacement, 0.0, "flap released after retract");
    }

    #[test]
    fn attached_flap_trips_guard_within_one_sample() {
        // web 0.1 * 0.35 * 32 = 1.12 mm
        let mut b = bench(0.9, 0.0);
        let g = GuardParams {
            noise_margin_sigmas: 0.0,
            ..Default::default()
        };
        let k = b.spec.contact.stiffness(b.spec.web_total());
        let r = palpate_point(&mut b, &point(), &g).unwrap();
        assert_eq!(r.verdict, N);
        assert_eq!(r.exit, ExitReason::ForceLimit);
        let last = r.trace.last().unwrap();
        assert!(last.f_z >= 0.40);
        assert!(last.f_z - 0.40 <= k * 0.05 / 128.0 + 1e-12);
        assert_eq!(last.velocity, 0.0);
        assert!(r.trace[..r.trace.len() - 1].iter().all(|row| row.f_z < 0.40));
    }

    #[test]
    fn pinned_web_trips_at_first_sample_over_limit() {
        let mut b = bench(0.0, 0.0);
        for k in 0..32 {
            b.spec.points[k].drilled_depth = 0.25;
        }
        let g = GuardParams {
            noise_margin_sigmas: 0.0,
            ..Default::default()
        };
        let r = palpate_point(&mut b, &point(), &g).unwrap();
        let last = r.trace.last().unwrap();
        assert!(last.plant_f_z >= 0.40 && last.plant_f_z <= g.overshoot_bound(6.4));
        assert!((g.overshoot_bound(6.4) - 0.4025).abs() < 1e-12);
    }

    #[test]
    fn hole_under_point_is_no_contact() {
        let mut b = bench(0.0, 0.0);
        b.spec.rest_sag = 5.0;
        let r = palpate_point(&mut b, &point(), &GuardParams::default()).unwrap();
        assert_eq!(r.verdict, N);
        assert_eq!(r.exit, ExitReason::TravelLimit { contact: false });
        assert!(r.trace.iter().all(|row| row.tip_z >= -1.0));
    }

    #[test]
    fn stalled_camera_aborts() {
        let mut b = bench(1.0, 0.01);
        b.drop_frames = true;
        let e = palpate_point(&mut b, &point(), &GuardParams::default()).unwrap_err();
        assert!(matches!(e, PalpationError::SensorStall { missed: 4, .. }));
    }

    #[test]
    fn palpation_does_not_drill() {
        let mut b = bench(0.9, 0.01);
        let before: Vec<f64> = b.spec.points.iter().map(|p| p.web()).collect();
        palpate_point(&mut b, &point(), &GuardParams::default()).unwrap();
        let after: Vec<f64> = b.spec.points.iter().map(|p| p.web()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn quadrant_selection() {
        let path = DrillPath::default();
        let mut plan = crate::trajectory::Plan::new(path);
        for k in &mut plan.knots {
            k.completion_estimate = 0.8;
        }
        let pts = select_strategic_points(&plan.knots, &path, 0.75);
        assert_eq!(pts.map(|p| p.source_index), [0, 8, 16, 24]);
        for p in &pts {
            assert!((p.position.norm() - 3.0).abs() < 1e-12);
        }
        plan.knots[13].completion_estimate = 0.99;
        let pts = select_strategic_points(&plan.knots, &path, 0.75);
        assert_eq!(pts.map(|p| p.source_index), [0, 13, 16, 24]);
    }

    #[test]
    fn three_of_four_examples() {
        assert_eq!(flap_decision(&[D, N, D, D]), D);
        assert_eq!(decided_early(&[D, D, D]), Some(D));
        assert_eq!(decided_early(&[N, N]), Some(N));
        assert_eq!(decided_early(&[D, N]), None);
        assert_eq!(decided_early(&[D, N, D]), None);
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        write_trace(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "timestamp,tip_z,f_z,delta,state,plant_f_z\n");
    }
}
