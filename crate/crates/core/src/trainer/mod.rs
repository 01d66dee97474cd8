//! MLM training loop over packed tagged sequences.
//!
//! All randomness in a run is derived from `(seed, purpose, step, slot)`, so
//! a run resumed from a checkpoint at step `s` replays steps `s..T` exactly
//! as an uninterrupted run would.

pub mod checkpoint;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod lr;
pub mod model;
pub mod optim;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{PosCategory, TaggedSequence, NUM_CATEGORIES};
use crate::error::{Error, Result};
use crate::masker::{plan_batch, MaskPolicy, Strategy};
use crate::ptw::{CategoryLossTracker, LossMode, TrackerSnapshot, DEFAULT_BETA, DEFAULT_MU};
use crate::rng::{derived_rng, STREAM_SHUFFLE};
use crate::schedule::{ScheduleKind, ScheduleSpec};

pub use checkpoint::Checkpoint;
pub use eval::{eval_mlm, EvalReport, EVAL_RATIO};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use loss::{mlm_loss, reduce_token_losses, CategoryLosses};
pub use lr::{LrSchedule, LrShape};
pub use model::{GradFault, Model, ModelConfig, Params, Scalar, SequenceBatchItem};
pub use optim::{AdamConfig, AdamW};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PtwConfig {
    pub beta: f64,
    pub mu: f64,
    pub loss_mode: LossMode,
    /// Tracker snapshots are emitted every this many steps.
    pub snapshot_every: u64,
}

impl Default for PtwConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            mu: DEFAULT_MU,
            loss_mode: LossMode::PerTokenMean,
            snapshot_every: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrConfig {
    pub base: f64,
    pub warmup_steps: u64,
    /// Decay shape; `None` follows the masking-ratio schedule.
    pub shape: Option<LrShape>,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            base: 1e-3,
            warmup_steps: 100,
            shape: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// `schedule.total_steps` is the run length `T`.
    pub schedule: ScheduleSpec,
    pub mask: MaskPolicy,
    pub ptw: PtwConfig,
    pub lr: LrConfig,
    pub optim: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
    /// Checkpoint interval in steps; the final step is always saved. 0 saves
    /// only the final step.
    pub checkpoint_every: u64,
    /// Build mask plans on the rayon pool.
    pub parallel_masking: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            schedule: ScheduleSpec {
                kind: ScheduleKind::Fixed,
                p: 0.15,
                total_steps: 2000,
                floor: 0.0,
                peak_scale: 2.0,
            },
            mask: MaskPolicy::default(),
            ptw: PtwConfig::default(),
            lr: LrConfig::default(),
            optim: AdamConfig::default(),
            batch_size: 8,
            seed: 1,
            checkpoint_every: 500,
            parallel_masking: true,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> u64 {
        self.schedule.total_steps
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.schedule.total_steps > 0 {
            self.schedule.validate()?;
        }
        self.mask.split.validate()?;
        CategoryLossTracker::new(self.ptw.beta, self.ptw.mu)?;
        if self.ptw.snapshot_every == 0 {
            return Err(Error::Config("ptw.snapshot_every must be at least 1".into()));
        }
        self.lr_schedule().validate()?;
        self.optim.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.lr.base,
            warmup_steps: self.lr.warmup_steps,
            total_steps: self.schedule.total_steps,
            shape: self.lr.shape.unwrap_or_else(|| LrShape::coupled(self.schedule.kind)),
        }
    }
}

/// One metrics row per optimizer step. `step` is the 0-indexed step whose
/// batch produced the row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub ratio: f64,
    pub lr: f64,
    pub masked: u64,
}

/// Long-format tracker row: one per category per snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerRow {
    pub step: u64,
    pub category_name: String,
    pub cum_loss: f64,
    pub weight: f64,
}

pub fn tracker_rows(s: &TrackerSnapshot) -> Vec<TrackerRow> {
    PosCategory::ALL
        .iter()
        .take(s.cum_loss.len())
        .map(|c| TrackerRow {
            step: s.step,
            category_name: c.name().to_owned(),
            cum_loss: s.cum_loss[c.id()],
            weight: s.weights.0[c.id()],
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model<f32>,
    pub optim: AdamW<f32>,
    pub tracker: CategoryLossTracker,
    /// Completed optimizer steps.
    pub step: u64,
    /// Masked tokens over all completed steps.
    pub masked_total: u64,
    pub last: Option<StepMetrics>,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let model = Model::new(config.model, config.seed)?;
        let optim = AdamW::new(config.optim, &model.params);
        Ok(Self {
            model,
            optim,
            tracker: CategoryLossTracker::new(config.ptw.beta, config.ptw.mu)?,
            step: 0,
            masked_total: 0,
            last: None,
        })
    }
}

/// Receives the metrics stream. Checkpoint callbacks get the trainer so the
/// sink decides where and how to persist it.
pub trait MetricsSink {
    fn on_step(&mut self, row: &StepMetrics) -> Result<()>;
    fn on_snapshot(&mut self, snapshot: &TrackerSnapshot) -> Result<()>;
    fn on_checkpoint(&mut self, _trainer: &Trainer<'_>) -> Result<()> {
        Ok(())
    }
}

/// Keeps the whole stream in memory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemorySink {
    pub steps: Vec<StepMetrics>,
    pub snapshots: Vec<TrackerSnapshot>,
    pub checkpoints: Vec<u64>,
}

impl MetricsSink for MemorySink {
    fn on_step(&mut self, row: &StepMetrics) -> Result<()> {
        self.steps.push(row.clone());
        Ok(())
    }

    fn on_snapshot(&mut self, snapshot: &TrackerSnapshot) -> Result<()> {
        self.snapshots.push(snapshot.clone());
        Ok(())
    }

    fn on_checkpoint(&mut self, trainer: &Trainer<'_>) -> Result<()> {
        self.checkpoints.push(trainer.state.step);
        Ok(())
    }
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub state: TrainState,
    /// Identifies the vocabulary the data was encoded with.
    pub vocab_fingerprint: u64,
    data: &'a [TaggedSequence],
    grads: Params<f32>,
    perms: Vec<(u64, Vec<u32>)>,
    /// Initial snapshot and checkpoint still to be emitted.
    fresh: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a [TaggedSequence], vocab_fingerprint: u64) -> Result<Self> {
        let state = TrainState::new(&config)?;
        let mut trainer = Self::with_state(config, data, vocab_fingerprint, state)?;
        trainer.fresh = true;
        Ok(trainer)
    }

    /// Continues from `state`, for example a restored checkpoint. Nothing is
    /// emitted for the state's own step.
    pub fn with_state(config: TrainConfig, data: &'a [TaggedSequence], vocab_fingerprint: u64, state: TrainState) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for seq in data {
            seq.validate(config.model.vocab_size)?;
            if seq.len() > config.model.seq_len {
                return Err(Error::LengthMismatch {
                    expected: config.model.seq_len,
                    got: seq.len(),
                });
            }
        }
        if state.model.config != config.model {
            return Err(Error::Checkpoint("model shape differs from the configuration".into()));
        }
        if config.mask.strategy == Strategy::Ptw && config.schedule.kind != ScheduleKind::Fixed {
            log::warn!("combining a varying masking ratio with PTW masking is experimental");
        }
        Ok(Self {
            grads: Params::zeros(&config.model),
            config,
            state,
            vocab_fingerprint,
            data,
            perms: Vec::new(),
            fresh: false,
        })
    }

    pub fn data(&self) -> &[TaggedSequence] {
        self.data
    }

    fn epoch_perm(&mut self, epoch: u64) -> &[u32] {
        if let Some(i) = self.perms.iter().position(|(e, _)| *e == epoch) {
            return &self.perms[i].1;
        }
        let mut perm: Vec<u32> = (0..self.data.len() as u32).collect();
        perm.shuffle(&mut derived_rng(&[self.config.seed, STREAM_SHUFFLE, epoch]));
        if self.perms.len() >= 2 {
            self.perms.remove(0);
        }
        self.perms.push((epoch, perm));
        &self.perms.last().expect("just pushed").1
    }

    /// Data indices of the batch at step `t`: consecutive positions of a
    /// per-epoch shuffled order.
    pub fn batch_indices(&mut self, t: u64) -> Vec<usize> {
        let n = self.data.len() as u64;
        let b = self.config.batch_size as u64;
        (0..b)
            .map(|slot| {
                let g = t * b + slot;
                self.epoch_perm(g / n)[(g % n) as usize] as usize
            })
            .collect()
    }

    /// Runs one optimizer step.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let t = self.state.step;
        let ratio = self.config.schedule.ratio_at(t)?;
        let weights = (self.config.mask.strategy == Strategy::Ptw).then(|| self.state.tracker.weights());
        let idx = self.batch_indices(t);
        let data = self.data;
        let seqs: Vec<&TaggedSequence> = idx.iter().map(|&i| &data[i]).collect();
        let plans = plan_batch(
            &seqs,
            ratio,
            &self.config.mask,
            weights.as_ref(),
            self.config.model.vocab_size,
            self.config.seed,
            t,
            self.config.parallel_masking,
        )?;
        let items: Vec<SequenceBatchItem<'_>> = seqs
            .iter()
            .zip(&plans)
            .filter(|(_, p)| !p.masked.is_empty())
            .map(|(seq, p)| SequenceBatchItem {
                input_ids: &p.corrupted_ids,
                targets: p.labels(seq).collect(),
            })
            .collect();
        let masked: u64 = plans.iter().map(|p| p.masked.len() as u64).sum();

        self.grads.fill_zero();
        let (loss, per_category) = if items.is_empty() {
            // nothing to predict at a zero ratio; the step still advances
            (0.0, vec![None; NUM_CATEGORIES])
        } else {
            let batch_loss = self.state.model.loss_and_grad(&items, &mut self.grads)?;
            let tokens = seqs
                .iter()
                .zip(&plans)
                .filter(|(_, p)| !p.masked.is_empty())
                .zip(&batch_loss.token_nll)
                .flat_map(|((seq, plan), nll)| plan.masked.iter().map(|&i| seq.pos_ids[i]).zip(nll.iter().copied()));
            let reduced = reduce_token_losses(tokens, self.config.ptw.loss_mode)?;
            (batch_loss.mean, reduced.per_category)
        };
        if !loss.is_finite() {
            return Err(self.non_finite(t));
        }
        self.state.tracker.update(&per_category)?;
        let lr = self.config.lr_schedule().at(t);
        self.state.optim.step(&mut self.state.model.params, &mut self.grads, lr);
        if !self.state.model.params.all_finite() {
            return Err(self.non_finite(t));
        }
        self.state.step += 1;
        self.state.masked_total += masked;
        let row = StepMetrics {
            step: t,
            loss,
            ratio,
            lr,
            masked,
        };
        self.state.last = Some(row.clone());
        Ok(row)
    }

    fn non_finite(&self, step: u64) -> Error {
        let last = match &self.state.last {
            Some(m) => serde_json::to_string(m).unwrap_or_default(),
            None => "none".into(),
        };
        Error::NonFinite { step, last }
    }

    /// Trains until `until` completed steps (capped at `T`), reporting to
    /// `sink`. A fresh trainer first emits the initial tracker snapshot and
    /// checkpoint.
    pub fn run(&mut self, until: u64, sink: &mut dyn MetricsSink) -> Result<()> {
        let total = self.config.total_steps();
        let until = until.min(total);
        if self.fresh && total > 0 {
            self.fresh = false;
            sink.on_snapshot(&self.state.tracker.snapshot())?;
            sink.on_checkpoint(self)?;
        }
        while self.state.step < until {
            let row = self.step()?;
            sink.on_step(&row)?;
            let s = self.state.step;
            if s % self.config.ptw.snapshot_every == 0 || s == total {
                sink.on_snapshot(&self.state.tracker.snapshot())?;
            }
            let every = self.config.checkpoint_every;
            if (every > 0 && s % every == 0) || s == total {
                sink.on_checkpoint(self)?;
            }
        }
        Ok(())
    }
}

/// Trains for the full horizon from a fresh state.
pub fn train(config: &TrainConfig, data: &[TaggedSequence], sink: &mut dyn MetricsSink) -> Result<TrainState> {
    let mut trainer = Trainer::new(config.clone(), data, 0)?;
    trainer.run(config.total_steps(), sink)?;
    Ok(trainer.state)
}
