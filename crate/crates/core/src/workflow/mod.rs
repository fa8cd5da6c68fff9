//! The drilling state machine: drill/recognize loop, completion gate, palpation,
//! repeat drilling and the exception halt. [`run_trial`] drives it against the
//! simulated cell.

mod trial;

pub use trial::{run_trial, FaultPlan, Fidelity, StallWindow, TrialConfig, TrialError, TrialOutcome};

use crate::detector::DetachabilityReading;
use crate::specimen::MembraneDamage;
use crate::time::Tick;
use crate::{require_non_negative, require_positive, ConfigError, FlapState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HaltReason {
    Exception,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkflowState {
    Initializing,
    DrillingCycle,
    Recognizing,
    /// `round` repeat rounds have been completed before this palpation.
    Palpating { round: u32 },
    RepeatDrilling { cycles_left: u32, round: u32 },
    Done(FlapState),
    Halted(HaltReason),
}

impl WorkflowState {
    pub fn is_terminal(self) -> bool {
        matches!(self, WorkflowState::Done(_) | WorkflowState::Halted(_))
    }

    pub fn is_drilling(self) -> bool {
        matches!(
            self,
            WorkflowState::DrillingCycle | WorkflowState::RepeatDrilling { .. }
        )
    }
}

impl fmt::Display for WorkflowState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkflowState::Initializing => write!(f, "Initializing"),
            WorkflowState::DrillingCycle => write!(f, "DrillingCycle"),
            WorkflowState::Recognizing => write!(f, "Recognizing"),
            WorkflowState::Palpating { round } => write!(f, "Palpating(round {round})"),
            WorkflowState::RepeatDrilling { cycles_left, round } => {
                write!(f, "RepeatDrilling({cycles_left}, round {round})")
            }
            WorkflowState::Done(s) => write!(f, "Done({s})"),
            WorkflowState::Halted(r) => write!(f, "Halted({r:?})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Event {
    Initialized,
    CycleComplete { average: f64, levels: Vec<f64> },
    PassComplete,
    Verdict { state: FlapState, detachable_count: usize },
    ExceptionDeflection { delta: f64 },
    RepeatCycleComplete,
    /// Informational; the state is unchanged.
    MembraneDamaged { cause: MembraneDamage },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Initialized => "Initialized",
            Event::CycleComplete { .. } => "CycleComplete",
            Event::PassComplete => "PassComplete",
            Event::Verdict { .. } => "Verdict",
            Event::ExceptionDeflection { .. } => "ExceptionDeflection",
            Event::RepeatCycleComplete => "RepeatCycleComplete",
            Event::MembraneDamaged { .. } => "MembraneDamaged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("workflow fault: event {event} is not legal in state {state}")]
pub struct WorkflowFault {
    pub state: WorkflowState,
    pub event: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkflowParams {
    /// Average completion strictly above this enters palpation.
    pub gate: f64,
    pub repeat_cycles: u32,
    /// Repeat rounds before giving up with a non-detachable verdict.
    pub round_cap: u32,
    /// Consecutive frames above threshold before an exception is raised.
    pub debounce_frames: u32,
    pub recognition_s: f64,
    pub init_s: f64,
    pub max_drilling_cycles: u32,
    pub fidelity: Fidelity,
}

impl Default for WorkflowParams {
    fn default() -> Self {
        Self {
            gate: 0.80,
            repeat_cycles: 10,
            round_cap: 5,
            debounce_frames: 1,
            recognition_s: 3.0,
            init_s: 2.0,
            max_drilling_cycles: 400,
            fidelity: Fidelity::RegionStats,
        }
    }
}

impl WorkflowParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..1.0).contains(&self.gate) {
            return Err(ConfigError::new("workflow.gate", "must lie in [0, 1)"));
        }
        if self.repeat_cycles == 0 {
            return Err(ConfigError::new("workflow.repeat_cycles", "must be at least 1"));
        }
        if self.debounce_frames == 0 {
            return Err(ConfigError::new("workflow.debounce_frames", "must be at least 1"));
        }
        require_positive("workflow.recognition_s", self.recognition_s)?;
        require_non_negative("workflow.init_s", self.init_s)?;
        if self.max_drilling_cycles == 0 {
            return Err(ConfigError::new("workflow.max_drilling_cycles", "must be at least 1"));
        }
        Ok(())
    }
}

/// The transition function. Pure; illegal events are faults.
pub fn advance_state(
    state: WorkflowState,
    event: &Event,
    params: &WorkflowParams,
) -> Result<WorkflowState, WorkflowFault> {
    use WorkflowState as S;
    let next = match (state, event) {
        (S::Initializing, Event::Initialized) => S::Recognizing,
        (S::Recognizing, Event::CycleComplete { average, .. }) => {
            if *average > params.gate {
                S::Palpating { round: 0 }
            } else {
                S::DrillingCycle
            }
        }
        (S::DrillingCycle, Event::PassComplete) => S::Recognizing,
        (S::Palpating { round }, Event::Verdict { state, .. }) => match state {
            FlapState::Detachable => S::Done(FlapState::Detachable),
            FlapState::NonDetachable if round >= params.round_cap => {
                S::Done(FlapState::NonDetachable)
            }
            FlapState::NonDetachable => S::RepeatDrilling {
                cycles_left: params.repeat_cycles,
                round,
            },
        },
        (S::RepeatDrilling { cycles_left, round }, Event::RepeatCycleComplete) => {
            if cycles_left <= 1 {
                S::Palpating { round: round + 1 }
            } else {
                S::RepeatDrilling {
                    cycles_left: cycles_left - 1,
                    round,
                }
            }
        }
        (s, Event::ExceptionDeflection { .. }) if s.is_drilling() => S::Halted(HaltReason::Exception),
        (s, Event::MembraneDamaged { .. }) if !s.is_terminal() => s,
        (s, e) => {
            return Err(WorkflowFault {
                state: s,
                event: e.name(),
            })
        }
    };
    Ok(next)
}

/// Debounced deflection watch during drilling.
#[derive(Debug, Clone, PartialEq)]
pub struct ExceptionMonitor {
    pub threshold: f64,
    pub frames_required: u32,
    run: u32,
}

impl ExceptionMonitor {
    pub fn new(threshold: f64, frames_required: u32) -> Self {
        Self {
            threshold,
            frames_required: frames_required.max(1),
            run: 0,
        }
    }

    /// Returns an exception event on the frame that completes the run.
    pub fn observe(&mut self, reading: &DetachabilityReading) -> Option<Event> {
        if reading.delta.abs() > self.threshold {
            self.run += 1;
            if self.run == self.frames_required {
                return Some(Event::ExceptionDeflection { delta: reading.delta });
            }
        } else {
            self.run = 0;
        }
        None
    }

    pub fn reset(&mut self) {
        self.run = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Drilling,
    Recognizing,
    Palpating,
    Repeat,
    Overhead,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Drilling,
        Phase::Recognizing,
        Phase::Palpating,
        Phase::Repeat,
        Phase::Overhead,
    ];
}

/// Trial time with per-phase accounting, in ticks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialClock {
    now: Tick,
    spent: [u64; 5],
}

impl TrialClock {
    pub fn now(&self) -> Tick {
        self.now
    }

    /// Moves to `t`, charging the elapsed time to `phase`. Going backwards is a no-op.
    pub fn advance_to(&mut self, phase: Phase, t: Tick) {
        if t > self.now {
            self.spent[phase as usize] += (t - self.now).0;
            self.now = t;
        }
    }

    pub fn spent(&self, phase: Phase) -> Tick {
        Tick(self.spent[phase as usize])
    }

    pub fn total(&self) -> Tick {
        self.now
    }

    pub fn phase_sum(&self) -> Tick {
        Tick(self.spent.iter().sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: f64,
    /// State after the event.
    pub state: WorkflowState,
    pub event: String,
    pub payload: Event,
    pub digest: String,
}

pub fn payload_digest(event: &Event) -> String {
    let json = serde_json::to_string(event).expect("events serialize");
    Sha256::digest(json.as_bytes())[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Append-only trial event log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub records: Vec<LogRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("record {index}: digest mismatch")]
    Digest { index: usize },
    #[error("record {index}: {source}")]
    Fault { index: usize, source: WorkflowFault },
    #[error("record {index}: replay reached {got}, log says {logged}")]
    Diverged {
        index: usize,
        got: WorkflowState,
        logged: WorkflowState,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EventLog {
    pub fn push(&mut self, t: Tick, state: WorkflowState, event: Event) {
        self.records.push(LogRecord {
            t: t.seconds(),
            state,
            event: event.name().to_string(),
            digest: payload_digest(&event),
            payload: event,
        });
    }

    pub fn states(&self) -> Vec<WorkflowState> {
        self.records.iter().map(|r| r.state).collect()
    }

    pub fn write_jsonl<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read_jsonl<R: std::io::BufRead>(input: R) -> Result<Self, ReplayError> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(&line).map_err(|source| ReplayError::Parse { line: i + 1, source })?,
            );
        }
        Ok(Self { records })
    }

    /// Re-applies every event from `Initializing` and checks each logged state.
    pub fn replay(&self, params: &WorkflowParams) -> Result<Vec<WorkflowState>, ReplayError> {
        let mut state = WorkflowState::Initializing;
        let mut out = Vec::with_capacity(self.records.len());
        for (index, r) in self.records.iter().enumerate() {
            if payload_digest(&r.payload) != r.digest {
                return Err(ReplayError::Digest { index });
            }
            state = advance_state(state, &r.payload, params)
                .map_err(|source| ReplayError::Fault { index, source })?;
            if state != r.state {
                return Err(ReplayError::Diverged {
                    index,
                    got: state,
                    logged: r.state,
                });
            }
            out.push(state);
        }
        Ok(out)
    }
}
