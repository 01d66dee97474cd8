//! Held-out masked-token evaluation.

use serde::{Deserialize, Serialize};

use super::loss::reduce_token_losses;
use super::model::{Model, Scalar, SequenceBatchItem};
use crate::corpus::{group_mean, PosCategory, PosGroup, TaggedSequence};
use crate::error::{Error, Result};
use crate::masker::{plan_sequence, MaskPolicy};
use crate::ptw::LossMode;
use crate::rng::{derive_seed, STREAM_EVAL};

pub const EVAL_RATIO: f64 = 0.15;
const EVAL_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: f64,
    pub masked_tokens: u64,
    /// Mean token loss per category; `None` where nothing was masked.
    pub per_category: Vec<Option<f64>>,
    pub counts: Vec<u64>,
    pub function_mean: Option<f64>,
    pub non_function_mean: Option<f64>,
}

/// Masks every held-out sequence at `ratio` with random-token selection and
/// the default corruption split, seeded per sequence from `seed`.
pub fn eval_mlm<F: Scalar>(model: &Model<F>, heldout: &[TaggedSequence], ratio: f64, seed: u64) -> Result<EvalReport> {
    if heldout.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let policy = MaskPolicy::default();
    let vocab = model.config.vocab_size;
    let mut tokens: Vec<(PosCategory, f64)> = Vec::new();
    for (c, chunk) in heldout.chunks(EVAL_CHUNK).enumerate() {
        let plans = chunk
            .iter()
            .enumerate()
            .map(|(i, seq)| {
                let index = (c * EVAL_CHUNK + i) as u64;
                plan_sequence(seq, ratio, &policy, None, vocab, derive_seed(&[seed, STREAM_EVAL, index]))
            })
            .collect::<Result<Vec<_>>>()?;
        let items: Vec<SequenceBatchItem<'_>> = chunk
            .iter()
            .zip(&plans)
            .filter(|(_, p)| !p.masked.is_empty())
            .map(|(seq, p)| SequenceBatchItem {
                input_ids: &p.corrupted_ids,
                targets: p.labels(seq).collect(),
            })
            .collect();
        if items.is_empty() {
            continue;
        }
        let loss = model.loss(&items)?;
        let masked = chunk.iter().zip(&plans).filter(|(_, p)| !p.masked.is_empty());
        for ((seq, plan), nll) in masked.zip(loss.token_nll) {
            tokens.extend(plan.masked.iter().map(|&i| seq.pos_ids[i]).zip(nll));
        }
    }
    let reduced = reduce_token_losses(tokens, LossMode::PerTokenMean)?;
    let values: Vec<f64> = reduced.per_category.iter().map(|v| v.unwrap_or(0.0)).collect();
    let present = |c: PosCategory| reduced.counts[c.id()] > 0;
    Ok(EvalReport {
        overall: reduced.loss,
        masked_tokens: reduced.counts.iter().sum(),
        function_mean: group_mean(&values, PosGroup::Function, present),
        non_function_mean: group_mean(&values, PosGroup::NonFunction, present),
        per_category: reduced.per_category,
        counts: reduced.counts,
    })
}

impl EvalReport {
    pub fn category(&self, c: PosCategory) -> Option<f64> {
        self.per_category.get(c.id()).copied().flatten()
    }
}
