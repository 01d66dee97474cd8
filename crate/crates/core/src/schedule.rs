//! Masking-ratio schedules.
//!
//! A schedule maps a training step `t` in `[0, T]` to the fraction of
//! maskable tokens selected at that step. All decaying kinds start at
//! `peak = 2p` (configurable through `peak_scale`) so that the mean ratio over
//! a run stays close to the fixed baseline `p`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset added to the cosine curve so the ratio never reaches zero.
pub const COSINE_OFFSET: f64 = 0.02;

/// Largest representable ratio below 1.
const MAX_RATIO: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Fixed,
    LinearDecay,
    CosineDecay,
    /// `peak * (1 - x^2)`: slow early, fast late.
    QuadConcaveDecay,
    /// `peak * (1 - x)^2`: fast early, slow late.
    QuadConvexDecay,
    Ascending,
    /// Symmetric triangle peaking at `T/2`.
    AscendThenDecay,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 7] = [
        ScheduleKind::Fixed,
        ScheduleKind::LinearDecay,
        ScheduleKind::CosineDecay,
        ScheduleKind::QuadConcaveDecay,
        ScheduleKind::QuadConvexDecay,
        ScheduleKind::Ascending,
        ScheduleKind::AscendThenDecay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Fixed => "fixed",
            ScheduleKind::LinearDecay => "linear-decay",
            ScheduleKind::CosineDecay => "cosine-decay",
            ScheduleKind::QuadConcaveDecay => "quad-concave-decay",
            ScheduleKind::QuadConvexDecay => "quad-convex-decay",
            ScheduleKind::Ascending => "ascending",
            ScheduleKind::AscendThenDecay => "ascend-then-decay",
        }
    }

    pub fn is_decay(self) -> bool {
        matches!(
            self,
            ScheduleKind::LinearDecay
                | ScheduleKind::CosineDecay
                | ScheduleKind::QuadConcaveDecay
                | ScheduleKind::QuadConvexDecay
        )
    }

    /// Default lower clamp for the kind.
    pub fn default_floor(self) -> f64 {
        match self {
            ScheduleKind::CosineDecay => COSINE_OFFSET,
            _ => 0.0,
        }
    }

    /// Unit-height curve shape on `x = t/T` in `[0, 1]`.
    pub fn shape(self, x: f64) -> f64 {
        match self {
            ScheduleKind::Fixed => 1.0,
            ScheduleKind::LinearDecay => 1.0 - x,
            ScheduleKind::CosineDecay => (1.0 + (PI * x).cos()) / 2.0,
            ScheduleKind::QuadConcaveDecay => 1.0 - x * x,
            ScheduleKind::QuadConvexDecay => (1.0 - x) * (1.0 - x),
            ScheduleKind::Ascending => x,
            ScheduleKind::AscendThenDecay => {
                if x <= 0.5 {
                    2.0 * x
                } else {
                    2.0 - 2.0 * x
                }
            }
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown schedule kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    /// Base (fixed-baseline) ratio, in `(0, 0.5]`.
    pub p: f64,
    /// Horizon `T` in steps.
    pub total_steps: u64,
    /// Lower clamp on the returned ratio.
    pub floor: f64,
    /// Starting point of decaying kinds as a multiple of `p`.
    pub peak_scale: f64,
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind, p: f64, total_steps: u64) -> Result<Self> {
        let spec = Self {
            kind,
            p,
            total_steps,
            floor: kind.default_floor(),
            peak_scale: 2.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_floor(mut self, floor: f64) -> Result<Self> {
        self.floor = floor;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 0.5) {
            return Err(Error::Config(format!("schedule.p = {} outside (0, 0.5]", self.p)));
        }
        if self.total_steps < 1 {
            return Err(Error::Config("schedule.T must be at least 1".into()));
        }
        if !(self.peak_scale > 0.0 && self.peak_scale.is_finite()) {
            return Err(Error::Config(format!("schedule.peak_scale = {} must be positive", self.peak_scale)));
        }
        if !(self.floor >= 0.0 && self.floor < self.max_ratio()) {
            return Err(Error::Config(format!(
                "schedule.floor = {} outside [0, {})",
                self.floor,
                self.max_ratio()
            )));
        }
        Ok(())
    }

    /// Starting ratio of the decaying kinds (`2p` by default).
    pub fn peak(&self) -> f64 {
        self.peak_scale * self.p
    }

    /// Largest value the unclamped curve reaches.
    pub fn max_ratio(&self) -> f64 {
        match self.kind {
            ScheduleKind::Fixed => self.p,
            ScheduleKind::CosineDecay => self.peak() + COSINE_OFFSET,
            _ => self.peak(),
        }
    }

    /// Masking ratio at step `t`.
    pub fn ratio_at(&self, t: u64) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::StepOutOfRange {
                t: t as i64,
                total: self.total_steps,
            });
        }
        let total = self.total_steps as f64;
        let t = t as f64;
        let peak = self.peak();
        let raw = match self.kind {
            ScheduleKind::Fixed => self.p,
            ScheduleKind::LinearDecay => (1.0 - t / total) * peak,
            ScheduleKind::CosineDecay => (1.0 + (PI * t / total).cos()) * (peak / 2.0) + COSINE_OFFSET,
            ScheduleKind::QuadConcaveDecay => {
                let x = t / total;
                peak * (1.0 - x * x)
            }
            ScheduleKind::QuadConvexDecay => {
                let x = 1.0 - t / total;
                peak * x * x
            }
            ScheduleKind::Ascending => (t / total) * peak,
            ScheduleKind::AscendThenDecay => {
                if 2.0 * t <= total {
                    peak * (2.0 * t / total)
                } else {
                    peak * (2.0 - 2.0 * t / total)
                }
            }
        };
        Ok(raw.max(self.floor).min(MAX_RATIO))
    }

    /// Mean ratio over steps `0..T`.
    pub fn expected_mass(&self) -> f64 {
        let sum: f64 = (0..self.total_steps)
            .map(|t| self.ratio_at(t).expect("t < T"))
            .sum();
        sum / self.total_steps as f64
    }

    /// `(t, ratio)` for every `t` in `0..=T`.
    pub fn curve(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        (0..=self.total_steps).map(|t| (t, self.ratio_at(t).expect("t <= T")))
    }
}
