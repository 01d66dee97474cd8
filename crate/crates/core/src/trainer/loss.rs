//! Masked-token loss and its per-category decomposition.

use ndarray::Array3;

use super::model::Scalar;
use crate::corpus::{PosCategory, TaggedSequence, NUM_CATEGORIES};
use crate::error::{Error, Result};
use crate::masker::MaskPlan;
use crate::ptw::LossMode;

/// Batch loss and one value per category; `None` where the category had no
/// masked token.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryLosses {
    pub loss: f64,
    pub per_category: Vec<Option<f64>>,
    pub counts: Vec<u64>,
}

/// Reduces token-level `(category, nll)` pairs.
pub fn reduce_token_losses<I>(tokens: I, mode: LossMode) -> Result<CategoryLosses>
where
    I: IntoIterator<Item = (PosCategory, f64)>,
{
    let mut sums = vec![0.0f64; NUM_CATEGORIES];
    let mut counts = vec![0u64; NUM_CATEGORIES];
    let mut total = 0.0;
    let mut n = 0u64;
    for (cat, nll) in tokens {
        sums[cat.id()] += nll;
        counts[cat.id()] += 1;
        total += nll;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let per_category = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| {
            (c > 0).then(|| match mode {
                LossMode::PerTokenMean => s / c as f64,
                LossMode::BatchShare => s / n as f64,
            })
        })
        .collect();
    Ok(CategoryLosses {
        loss: total / n as f64,
        per_category,
        counts,
    })
}

/// Loss from full log-probabilities of shape `(batch, seq_len, vocab)`.
pub fn mlm_loss<F: Scalar>(
    log_probs: &Array3<F>,
    sequences: &[&TaggedSequence],
    plans: &[MaskPlan],
    mode: LossMode,
) -> Result<CategoryLosses> {
    if sequences.len() != plans.len() || log_probs.shape()[0] != plans.len() {
        return Err(Error::LengthMismatch {
            expected: plans.len(),
            got: sequences.len().min(log_probs.shape()[0]),
        });
    }
    let mut tokens = Vec::new();
    for (b, (seq, plan)) in sequences.iter().zip(plans).enumerate() {
        for (pos, label) in plan.labels(seq) {
            let lp = log_probs[[b, pos, label as usize]].to_f64().unwrap();
            tokens.push((seq.pos_ids[pos], -lp));
        }
    }
    reduce_token_losses(tokens, mode)
}
