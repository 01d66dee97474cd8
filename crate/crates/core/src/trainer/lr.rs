//! Learning-rate schedule: linear warmup, then a decay shape that follows
//! the masking-ratio schedule unless overridden.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::ScheduleKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrShape {
    Constant,
    Linear,
    Cosine,
    QuadConcave,
    QuadConvex,
}

impl LrShape {
    pub const ALL: [LrShape; 5] = [
        LrShape::Constant,
        LrShape::Linear,
        LrShape::Cosine,
        LrShape::QuadConcave,
        LrShape::QuadConvex,
    ];

    /// Decay shape matching a masking-ratio schedule. Non-decaying ratio
    /// schedules keep a constant rate, except that ascend-then-decay still
    /// decays linearly.
    pub fn coupled(kind: ScheduleKind) -> Self {
        match kind {
            ScheduleKind::Fixed | ScheduleKind::Ascending => LrShape::Constant,
            ScheduleKind::LinearDecay | ScheduleKind::AscendThenDecay => LrShape::Linear,
            ScheduleKind::CosineDecay => LrShape::Cosine,
            ScheduleKind::QuadConcaveDecay => LrShape::QuadConcave,
            ScheduleKind::QuadConvexDecay => LrShape::QuadConvex,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LrShape::Constant => "constant",
            LrShape::Linear => "linear",
            LrShape::Cosine => "cosine",
            LrShape::QuadConcave => "quad-concave",
            LrShape::QuadConvex => "quad-convex",
        }
    }

    /// Multiplier at progress `s` in `[0, 1]`.
    pub fn factor(self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        match self {
            LrShape::Constant => 1.0,
            LrShape::Linear => 1.0 - s,
            LrShape::Cosine => (1.0 + (PI * s).cos()) / 2.0,
            LrShape::QuadConcave => 1.0 - s * s,
            LrShape::QuadConvex => (1.0 - s) * (1.0 - s),
        }
    }
}

impl fmt::Display for LrShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LrShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LrShape::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown lr shape {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub shape: LrShape,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("lr.base = {} must be non-negative", self.base_lr)));
        }
        Ok(())
    }

    pub fn at(&self, t: u64) -> f64 {
        if t < self.warmup_steps {
            return self.base_lr * t as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return self.base_lr;
        }
        let s = (t - self.warmup_steps) as f64 / span as f64;
        self.base_lr * self.shape.factor(s)
    }
}
