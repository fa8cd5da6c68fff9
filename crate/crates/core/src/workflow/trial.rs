//! Trial runner: the simulated cell (specimen, camera, detector, force sensor) on one
//! clock, driven through the state machine.

use super::{
    advance_state, EventLog, Event, ExceptionMonitor, Phase, TrialClock, WorkflowFault, WorkflowParams,
    WorkflowState,
};
use crate::detector::{capture_initial, DetachabilityReading, DetectError, Detector, DetectorConfig, DetectorParams, Label};
use crate::palpation::{palpate_flap, select_strategic_points, DrillTool, FlapVerdict, GuardParams, PalpationError, Rig};
use crate::rng::{self, sub_seed, Stream};
use crate::sensing::{
    observe_completion, write_frame, CameraModel, DepthMap, ForceReading, ForceSensor, ForceSensorParams,
    FrameIoError, FrameMeta, LinearStats, ObserverParams, Renderer, RgbImage,
};
use crate::specimen::{generate_specimen, ground_truth_case, CaseLabel, SpecimenParams, SpecimenTruth};
use crate::time::{Tick, FRAME_PERIOD};
use crate::trajectory::{
    build_spline, ClosedTrajectory, DamperParams, FinishingParams, FinishingPlan, Plan, PlannerError, RemainingDepth,
};
use crate::{ConfigError, FlapState};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// How detector readings are produced during a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    /// Render every frame and run the full detector.
    Full,
    /// Exact region means from the labeled pixel sets plus sampled mean noise.
    RegionStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StallWindow {
    pub start_s: f64,
    pub end_s: f64,
}

/// Injected faults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultPlan {
    /// Sever every web and drop the flap at this time (s).
    pub collapse_at_s: Option<f64>,
    pub collapse_sag: f64,
    /// No camera frames arrive inside these windows.
    pub stalls: Vec<StallWindow>,
}

impl Default for FaultPlan {
    fn default() -> Self {
        Self {
            collapse_at_s: None,
            collapse_sag: 0.25,
            stalls: Vec::new(),
        }
    }
}

impl FaultPlan {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(t) = self.collapse_at_s {
            crate::require_non_negative("faults.collapse_at_s", t)?;
        }
        crate::require_non_negative("faults.collapse_sag", self.collapse_sag)?;
        for w in &self.stalls {
            if !(w.start_s >= 0.0 && w.end_s > w.start_s) {
                return Err(ConfigError::new("faults.stalls", "each window needs 0 <= start_s < end_s"));
            }
        }
        Ok(())
    }
}

/// Everything a trial needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialConfig {
    pub specimen: SpecimenParams,
    pub camera: CameraModel,
    pub observer: ObserverParams,
    pub force: ForceSensorParams,
    pub detector: DetectorParams,
    pub damper: DamperParams,
    pub finishing: FinishingParams,
    pub palpation: GuardParams,
    pub workflow: WorkflowParams,
    pub faults: FaultPlan,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.specimen.validate()?;
        self.camera.validate()?;
        self.camera
            .check_covers(self.specimen.path.center, self.specimen.path.radius + self.specimen.bit_radius)?;
        self.observer.validate()?;
        crate::require_non_negative("force.sigma", self.force.sigma)?;
        self.detector.validate()?;
        DetectorConfig::for_scene(&self.detector, &self.camera, &self.specimen.path, self.specimen.bit_radius)?;
        self.damper.validate()?;
        self.finishing.validate()?;
        self.palpation.validate()?;
        self.workflow.validate()?;
        self.faults.validate()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrialError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fault(#[from] WorkflowFault),
    #[error("palpation: {0}")]
    Stall(#[from] PalpationError),
    #[error("planner: {0}")]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Detector(#[from] DetectError),
    #[error("frame dump: {0}")]
    Io(#[from] FrameIoError),
    #[error("no completion gate after {cycles} drilling cycles")]
    CycleLimit { cycles: u32 },
}

/// Observer invocations by the state that made them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObserverCalls {
    pub recognizing: u32,
    pub repeat_drilling: u32,
    pub other: u32,
}

/// Collapse injection and the resulting halt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultTiming {
    pub injected_s: f64,
    pub injected_during: WorkflowState,
    pub halted_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub trial_id: u64,
    pub final_state: WorkflowState,
    /// Last palpation verdict; `None` when the trial halted before palpating.
    pub verdict: Option<FlapState>,
    pub case: CaseLabel,
    pub successful: bool,
    /// Ground truth: every web severed.
    pub detachable: bool,
    pub halted: bool,
    pub clock: TrialClock,
    pub log: EventLog,
    pub palpations: Vec<FlapVerdict>,
    pub observer_calls: ObserverCalls,
    pub drilling_cycles: u32,
    pub repeat_cycles: u32,
    pub plan: Plan,
    pub trajectory: ClosedTrajectory,
    pub specimen: SpecimenTruth,
    /// Highest plant stiffness met while in contact during palpation (N/mm).
    pub k_max: f64,
    pub fault: Option<FaultTiming>,
    pub frames_dumped: u64,
}

impl TrialOutcome {
    pub fn total_s(&self) -> f64 {
        self.clock.total().seconds()
    }

    pub fn palpation_s(&self) -> f64 {
        self.clock.spent(Phase::Palpating).seconds()
    }

    pub fn palpation_fraction(&self) -> f64 {
        let total = self.total_s();
        if total > 0.0 {
            self.palpation_s() / total
        } else {
            0.0
        }
    }
}

/// Region sums over the labeled pixels, captured once per trial.
struct RegionModel {
    inner: LinearStats,
    outer: LinearStats,
    inner_initial: f64,
    outer_initial: f64,
    rng: ChaCha8Rng,
}

struct FrameDump {
    dir: PathBuf,
    next: u64,
}

struct Bench<'a> {
    cfg: &'a TrialConfig,
    seed: u64,
    trial_id: u64,
    spec: SpecimenTruth,
    clock: TrialClock,
    phase: Phase,
    state: WorkflowState,
    sensor: ForceSensor,
    renderer: Renderer,
    rgb: RgbImage,
    detector: Detector,
    model: RegionModel,
    full_palpation: bool,
    frames: u64,
    dump: Option<FrameDump>,
    collapse_at: Option<Tick>,
    fault: Option<FaultTiming>,
    stalls: Vec<(Tick, Tick)>,
    k_max: f64,
    io_error: Option<FrameIoError>,
}

impl<'a> Bench<'a> {
    fn new(
        cfg: &'a TrialConfig,
        seed: u64,
        trial_id: u64,
        spec: SpecimenTruth,
        dump_dir: Option<&Path>,
    ) -> Result<Self, TrialError> {
        let mut cam = cfg.camera;
        cam.texture_seed = sub_seed(seed, Stream::Texture, 0);
        let renderer = Renderer::new(&cam, &spec.path, spec.bit_radius)?;
        let mut rgb = renderer.render_rgb();
        let mut depth = renderer.render_depth(&spec, sub_seed(seed, Stream::DepthNoise, 0));
        rgb.timestamp = 0.0;
        depth.timestamp = 0.0;

        let dcfg = DetectorConfig::for_scene(&cfg.detector, &cam, &spec.path, spec.bit_radius)?;
        let reference = capture_initial(&depth, dcfg.crop).map_err(|source| DetectError {
            stage: crate::detector::Stage::Crop,
            source,
        })?;
        let mut detector = Detector::new(dcfg, reference);
        let labels = detector.labels(&rgb)?.clone();

        let crop = dcfg.crop;
        let mut inner_mask = vec![false; cam.width * cam.height];
        let mut outer_mask = vec![false; cam.width * cam.height];
        for (i, l) in labels.data.iter().enumerate() {
            let px = (crop.y + i / crop.width) * cam.width + crop.x + i % crop.width;
            match l {
                Label::Inner => inner_mask[px] = true,
                Label::Outer => outer_mask[px] = true,
                Label::Ignore => {}
            }
        }
        let base = spec.surface_base_depth + cam.depth_bias;
        let mask_mean = |mask: &[bool]| {
            let (s, n) = depth
                .data
                .iter()
                .zip(mask)
                .filter(|(_, m)| **m)
                .fold((0.0, 0usize), |(s, n), (v, _)| (s + v - base, n + 1));
            s / n.max(1) as f64
        };
        let model = RegionModel {
            inner: renderer.linear_stats(&inner_mask),
            outer: renderer.linear_stats(&outer_mask),
            inner_initial: mask_mean(&inner_mask),
            outer_initial: mask_mean(&outer_mask),
            rng: rng::stream(seed, Stream::RegionNoise),
        };

        let mut bench = Self {
            cfg,
            seed,
            trial_id,
            spec,
            clock: TrialClock::default(),
            phase: Phase::Overhead,
            state: WorkflowState::Initializing,
            sensor: ForceSensor::new(cfg.force.sigma, seed),
            renderer,
            rgb,
            detector,
            model,
            full_palpation: cfg.workflow.fidelity == Fidelity::Full || dump_dir.is_some(),
            frames: 1,
            dump: dump_dir.map(|d| FrameDump {
                dir: d.to_path_buf(),
                next: 0,
            }),
            collapse_at: cfg.faults.collapse_at_s.map(Tick::from_seconds_ceil),
            fault: None,
            stalls: cfg
                .faults
                .stalls
                .iter()
                .map(|w| (Tick::from_seconds_ceil(w.start_s), Tick::from_seconds_ceil(w.end_s)))
                .collect(),
            k_max: 0.0,
            io_error: None,
        };
        bench.dump_frame(&depth, "initial")?;
        Ok(bench)
    }

    fn advance_to(&mut self, phase: Phase, t: Tick) {
        if let Some(tc) = self.collapse_at {
            if t >= tc && self.fault.is_none() {
                self.clock.advance_to(phase, tc);
                self.spec.collapse(self.cfg.faults.collapse_sag);
                self.fault = Some(FaultTiming {
                    injected_s: tc.seconds(),
                    injected_during: self.state,
                    halted_s: None,
                });
                log::info!("trial {}: flap collapse injected at t={}", self.trial_id, tc.seconds());
            }
        }
        self.clock.advance_to(phase, t);
    }

    fn advance_by(&mut self, phase: Phase, seconds: f64) {
        let t = self.clock.now() + Tick::from_seconds_ceil(seconds);
        self.advance_to(phase, t);
    }

    fn stalled(&self, t: Tick) -> bool {
        self.stalls.iter().any(|&(a, b)| t >= a && t < b)
    }

    fn render(&mut self) -> DepthMap {
        let mut depth = self
            .renderer
            .render_depth(&self.spec, sub_seed(self.seed, Stream::DepthNoise, self.frames));
        self.frames += 1;
        depth.timestamp = self.clock.now().seconds();
        depth
    }

    fn dump_frame(&mut self, depth: &DepthMap, role: &str) -> Result<(), FrameIoError> {
        if let Some(d) = &mut self.dump {
            let meta = FrameMeta {
                timestamp: depth.timestamp,
                seed: self.seed,
                trial_id: self.trial_id,
                role: role.to_string(),
            };
            write_frame(&d.dir, d.next, &self.rgb, depth, &meta)?;
            d.next += 1;
        }
        Ok(())
    }

    fn reading(&mut self, full: bool) -> Result<DetachabilityReading, DetectError> {
        let now = self.clock.now().seconds();
        if full {
            let depth = self.render();
            return self.detector.detect(&self.rgb, &depth);
        }
        let sigma = self.renderer.camera().depth_sigma;
        let m = &mut self.model;
        let mean = |stats: &LinearStats, initial: f64, rng: &mut ChaCha8Rng| {
            let noise: f64 = rng.sample(StandardNormal);
            stats.mean_offset(&self.spec) + sigma / (stats.count as f64).sqrt() * noise - initial
        };
        let mi = mean(&m.inner, m.inner_initial, &mut m.rng);
        let mo = mean(&m.outer, m.outer_initial, &mut m.rng);
        Ok(DetachabilityReading::from_means(mi, mo, self.detector.cfg.threshold, now))
    }

    /// One traversal of the plan. Knot `k` is cut at fraction `k / n` of the cycle;
    /// the detector watches every frame. Returns the exception event if one fires.
    fn drill_cycle(
        &mut self,
        plan: &Plan,
        phase: Phase,
        monitor: &mut ExceptionMonitor,
    ) -> Result<Option<Event>, TrialError> {
        let start = self.clock.now();
        let len = Tick::from_seconds_ceil(self.cfg.damper.cycle_s);
        let end = start + len;
        let n = plan.knots.len() as u64;
        let pass_at = |k: u64| start + Tick((k * len.0).div_ceil(n));
        let full = self.cfg.workflow.fidelity == Fidelity::Full;
        let mut next_k = 0u64;
        monitor.reset();
        let mut t = Tick(start.0 + 1).next_multiple(FRAME_PERIOD);
        while t <= end {
            while next_k < n && pass_at(next_k) <= t {
                self.advance_to(phase, pass_at(next_k));
                let k = next_k as usize;
                self.spec.apply_drill_pass(k, plan.knots[k].z_command);
                next_k += 1;
            }
            self.advance_to(phase, t);
            if !self.stalled(t) {
                let reading = self.reading(full)?;
                if let Some(e) = monitor.observe(&reading) {
                    if self.dump.is_some() {
                        let depth = self.render();
                        self.dump_frame(&depth, "exception")?;
                    }
                    return Ok(Some(e));
                }
            }
            t += Tick(FRAME_PERIOD);
        }
        while next_k < n {
            self.advance_to(phase, pass_at(next_k));
            let k = next_k as usize;
            self.spec.apply_drill_pass(k, plan.knots[k].z_command);
            next_k += 1;
        }
        self.advance_to(phase, end);
        Ok(None)
    }
}

impl Rig for Bench<'_> {
    fn now(&self) -> Tick {
        self.clock.now()
    }

    fn wait_until(&mut self, t: Tick) {
        self.advance_to(self.phase, t);
    }

    fn sample_force(&mut self, tool: &DrillTool) -> ForceReading {
        let r = crate::sensing::sample_force(&mut self.spec, tool, &mut self.sensor, self.clock.now().seconds());
        if r.plant > 0.0 {
            self.k_max = self.k_max.max(self.plant_stiffness());
        }
        r
    }

    fn frame(&mut self) -> Option<DetachabilityReading> {
        if self.stalled(self.clock.now()) {
            return None;
        }
        match self.reading(self.full_palpation) {
            Ok(r) => Some(r),
            Err(e) => {
                log::error!("trial {}: {e}", self.trial_id);
                None
            }
        }
    }

    fn release(&mut self) {
        if self.dump.is_some() && self.io_error.is_none() {
            let depth = self.render();
            if let Err(e) = self.dump_frame(&depth, "palpation") {
                self.io_error = Some(e);
            }
        }
        self.spec.apply_contact_force(crate::geom::Vec2::ZERO, -1.0);
    }

    fn force_sigma(&self) -> f64 {
        self.sensor.sigma
    }

    fn plant_stiffness(&self) -> f64 {
        self.spec.contact.stiffness(self.spec.web_total())
    }
}

fn log_damage<F>(
    state: &mut WorkflowState,
    bench: &mut Bench,
    logged: &mut bool,
    fire: &mut F,
) -> Result<(), WorkflowFault>
where
    F: FnMut(&mut WorkflowState, &mut Bench, Event) -> Result<(), WorkflowFault>,
{
    if let (false, Some(cause)) = (*logged, bench.spec.damage) {
        *logged = true;
        log::info!("trial {}: membrane damaged ({cause:?})", bench.trial_id);
        fire(state, bench, Event::MembraneDamaged { cause })?;
    }
    Ok(())
}

/// Runs one trial to a terminal state. Frames are written to `dump_dir` when given.
pub fn run_trial(
    cfg: &TrialConfig,
    seed: u64,
    trial_id: u64,
    dump_dir: Option<&Path>,
) -> Result<TrialOutcome, TrialError> {
    cfg.validate()?;
    let wf = &cfg.workflow;
    let spec = generate_specimen(seed, &cfg.specimen)?;
    let mut bench = Bench::new(cfg, seed, trial_id, spec, dump_dir)?;
    let mut log = EventLog::default();
    let mut state = WorkflowState::Initializing;
    let mut plan = Plan::new(cfg.specimen.path);
    let mut remaining = RemainingDepth::new(cfg.finishing.alpha, cfg.specimen.thickness_mean);
    let mut finishing: Option<FinishingPlan> = None;
    let mut monitor = ExceptionMonitor::new(cfg.detector.threshold_mm, wf.debounce_frames);
    let mut last_obs = None;
    let mut palpations = Vec::new();
    let mut calls = ObserverCalls::default();
    let mut drilling_cycles = 0u32;
    let mut repeat_cycles = 0u32;
    let mut trajectory = build_spline(&plan.path, &plan.knots)?;
    let mut damage_logged = false;

    let mut fire = |state: &mut WorkflowState, bench: &mut Bench, event: Event| -> Result<(), WorkflowFault> {
        let next = advance_state(*state, &event, wf)?;
        log::debug!("t={:.3} {} --{}--> {}", bench.clock.now().seconds(), state, event.name(), next);
        log.push(bench.clock.now(), next, event);
        *state = next;
        bench.state = next;
        Ok(())
    };

    bench.advance_by(Phase::Overhead, wf.init_s);
    fire(&mut state, &mut bench, Event::Initialized)?;

    while !state.is_terminal() {
        match state {
            WorkflowState::Recognizing => {
                calls.recognizing += 1;
                let mut obs = observe_completion(
                    &bench.spec,
                    &cfg.observer,
                    sub_seed(seed, Stream::Observer, calls.recognizing as u64),
                );
                bench.advance_by(Phase::Recognizing, wf.recognition_s);
                obs.timestamp = bench.clock.now().seconds();
                remaining.observe(&obs.levels);
                let event = Event::CycleComplete {
                    average: obs.average,
                    levels: obs.levels.clone(),
                };
                last_obs = Some(obs);
                fire(&mut state, &mut bench, event)?;
                if let WorkflowState::Palpating { .. } = state {
                    for (k, knot) in plan.knots.iter_mut().enumerate() {
                        knot.completion_estimate = remaining.completion_estimate(k);
                    }
                    finishing = Some(FinishingPlan::at_gate(&plan, &remaining, cfg.finishing));
                }
            }
            WorkflowState::DrillingCycle => {
                drilling_cycles += 1;
                if drilling_cycles > wf.max_drilling_cycles {
                    return Err(TrialError::CycleLimit {
                        cycles: wf.max_drilling_cycles,
                    });
                }
                let obs = last_obs.as_ref().expect("recognition precedes drilling");
                let inc = plan.update(obs, &cfg.damper);
                remaining.advance(&inc);
                trajectory = build_spline(&plan.path, &plan.knots)?;
                let exception = bench.drill_cycle(&plan, Phase::Drilling, &mut monitor)?;
                log_damage(&mut state, &mut bench, &mut damage_logged, &mut fire)?;
                match exception {
                    Some(e) => {
                        if let Some(f) = &mut bench.fault {
                            f.halted_s = Some(bench.clock.now().seconds());
                        }
                        fire(&mut state, &mut bench, e)?
                    }
                    None => fire(&mut state, &mut bench, Event::PassComplete)?,
                }
            }
            WorkflowState::Palpating { .. } => {
                let points = select_strategic_points(&plan.knots, &plan.path, cfg.palpation.radius_fraction);
                log::info!(
                    "trial {}: {} points at knots {:?}",
                    trial_id,
                    state,
                    points.iter().map(|p| p.source_index).collect::<Vec<_>>()
                );
                bench.phase = Phase::Palpating;
                let verdict = palpate_flap(&mut bench, &points, &cfg.palpation)?;
                bench.phase = Phase::Overhead;
                if let Some(e) = bench.io_error.take() {
                    return Err(e.into());
                }
                let event = Event::Verdict {
                    state: verdict.final_state,
                    detachable_count: verdict.detachable_count,
                };
                palpations.push(verdict);
                log_damage(&mut state, &mut bench, &mut damage_logged, &mut fire)?;
                fire(&mut state, &mut bench, event)?;
            }
            WorkflowState::RepeatDrilling { round, .. } => {
                repeat_cycles += 1;
                let fin = finishing.as_ref().expect("finishing plan frozen at the gate");
                fin.step(&mut plan, &mut remaining, round);
                trajectory = build_spline(&plan.path, &plan.knots)?;
                let exception = bench.drill_cycle(&plan, Phase::Repeat, &mut monitor)?;
                log_damage(&mut state, &mut bench, &mut damage_logged, &mut fire)?;
                match exception {
                    Some(e) => {
                        if let Some(f) = &mut bench.fault {
                            f.halted_s = Some(bench.clock.now().seconds());
                        }
                        fire(&mut state, &mut bench, e)?
                    }
                    None => fire(&mut state, &mut bench, Event::RepeatCycleComplete)?,
                }
            }
            WorkflowState::Initializing | WorkflowState::Done(_) | WorkflowState::Halted(_) => {
                unreachable!("handled before the loop")
            }
        }
    }

    let verdict = match state {
        WorkflowState::Done(s) => Some(s),
        _ => None,
    };
    let spec = bench.spec.clone();
    let case = ground_truth_case(&spec, verdict.unwrap_or(FlapState::NonDetachable));
    Ok(TrialOutcome {
        seed,
        trial_id,
        final_state: state,
        verdict,
        case,
        successful: case.is_success(),
        detachable: spec.is_detachable(),
        halted: matches!(state, WorkflowState::Halted(_)),
        clock: bench.clock.clone(),
        log,
        palpations,
        observer_calls: calls,
        drilling_cycles,
        repeat_cycles,
        plan,
        trajectory,
        k_max: bench.k_max,
        fault: bench.fault,
        frames_dumped: bench.dump.as_ref().map_or(0, |d| d.next),
        specimen: spec,
    })
}
