//! Seeded simulator of an autonomous shell-drilling cell that decides whether the
//! drilled bone flap is detachable by pressing it with the drill and watching the
//! depth camera for deflection.
//!
//! The crate is organised bottom up:
//!
//! - [`specimen`] holds the hidden ground truth (shell thickness, drilled depth,
//!   springback, membrane, flap pose) and its contact mechanics.
//! - [`sensing`] renders RGB-D frames, samples the force sensor and emulates the
//!   completion-level recognizer.
//! - [`detector`] is the deflection detector: crop, subtract, segment, classify.
//! - [`trajectory`] plans per-point depths and the closed spline trajectory.
//! - [`palpation`] runs the force-guarded probing protocol and the 3-of-4 rule.
//! - [`workflow`] is the drilling state machine and the trial runner.
//! - [`harness`] covers configuration, batch runs, CSV records and reports.

pub mod detector;
pub mod geom;
pub mod harness;
pub mod palpation;
pub mod rng;
pub mod sensing;
pub mod specimen;
pub mod time;
pub mod trajectory;
pub mod workflow;

use serde::{Deserialize, Serialize};

/// Binary flap state produced by the detector and by the palpation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlapState {
    NonDetachable,
    Detachable,
}

impl FlapState {
    pub fn is_detachable(self) -> bool {
        matches!(self, FlapState::Detachable)
    }

    /// Short code used in CSV output.
    pub fn code(self) -> &'static str {
        match self {
            FlapState::NonDetachable => "ND",
            FlapState::Detachable => "D",
        }
    }

    pub fn from_code(s: &str) -> Option<Self> {
        match s {
            "ND" => Some(FlapState::NonDetachable),
            "D" => Some(FlapState::Detachable),
            _ => None,
        }
    }
}

impl std::fmt::Display for FlapState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// Invalid parameter value, reported with the offending key.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid configuration `{key}`: {reason}")]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn require_positive(key: &str, value: f64) -> Result<(), ConfigError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(key, format!("must be > 0, got {value}")))
    }
}

pub(crate) fn require_non_negative(key: &str, value: f64) -> Result<(), ConfigError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(key, format!("must be >= 0, got {value}")))
    }
}
