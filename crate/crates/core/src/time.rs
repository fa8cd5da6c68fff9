//! Simulated clock in integer ticks.
//!
//! One tick is 1/640 s, the coarsest grid on which both the 128 Hz force stream
//! and the 20 Hz camera stream land exactly.

use serde::{Deserialize, Serialize};

pub const TICKS_PER_SECOND: u64 = 640;
/// 1/128 s.
pub const FORCE_PERIOD: u64 = 5;
/// 1/20 s.
pub const FRAME_PERIOD: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Tick(pub u64);

impl Tick {
    pub fn seconds(self) -> f64 {
        self.0 as f64 / TICKS_PER_SECOND as f64
    }

    /// Nearest tick to a duration in seconds, rounded up so that a positive duration is never zero.
    pub fn from_seconds_ceil(s: f64) -> Tick {
        if s <= 0.0 {
            return Tick(0);
        }
        Tick((s * TICKS_PER_SECOND as f64 - 1e-9).ceil() as u64)
    }

    /// First multiple of `period` at or after `self`.
    pub fn next_multiple(self, period: u64) -> Tick {
        Tick(self.0.div_ceil(period) * period)
    }
}

impl std::ops::Add for Tick {
    type Output = Tick;
    fn add(self, o: Tick) -> Tick {
        Tick(self.0 + o.0)
    }
}

impl std::ops::Sub for Tick {
    type Output = Tick;
    fn sub(self, o: Tick) -> Tick {
        Tick(self.0 - o.0)
    }
}

impl std::ops::AddAssign for Tick {
    fn add_assign(&mut self, o: Tick) {
        self.0 += o.0;
    }
}
