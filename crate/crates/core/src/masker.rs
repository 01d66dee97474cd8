//! Selection and corruption of masked positions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{MASK_ID, RESERVED_TOKENS};
use crate::corpus::TaggedSequence;
use crate::error::{Error, Result};
use crate::ptw::WeightVector;
use crate::rng::{derived_rng, STREAM_MASK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    RandomToken,
    Ptw,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::RandomToken => "random-token",
            Strategy::Ptw => "ptw",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-token" => Ok(Strategy::RandomToken),
            "ptw" => Ok(Strategy::Ptw),
            _ => Err(Error::Config(format!("unknown mask strategy {s:?}"))),
        }
    }
}

/// Fractions of selected positions replaced by `[MASK]`, by a random token,
/// or left unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptSplit {
    pub mask: f64,
    pub random: f64,
    pub keep: f64,
}

impl Default for CorruptSplit {
    fn default() -> Self {
        Self {
            mask: 0.8,
            random: 0.1,
            keep: 0.1,
        }
    }
}

impl CorruptSplit {
    pub fn new(mask: f64, random: f64, keep: f64) -> Result<Self> {
        let split = Self { mask, random, keep };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.mask, self.random, self.keep];
        if parts.iter().any(|p| !(*p >= 0.0)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "mask.corrupt_split {}/{}/{} must be non-negative and sum to 1",
                self.mask, self.random, self.keep
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct MaskPolicy {
    pub strategy: Strategy,
    pub split: CorruptSplit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskAction {
    ReplaceWithMask,
    ReplaceWithRandom,
    KeepOriginal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    /// Selected positions, ascending.
    pub masked: Vec<usize>,
    /// One action per entry of `masked`.
    pub actions: Vec<MaskAction>,
    /// Model input after corruption.
    pub corrupted_ids: Vec<u32>,
}

impl MaskPlan {
    /// `(position, original id)` for every prediction target.
    pub fn labels<'a>(&'a self, seq: &'a TaggedSequence) -> impl Iterator<Item = (usize, u32)> + 'a {
        self.masked.iter().map(move |&i| (i, seq.token_ids[i]))
    }
}

/// Number of positions to mask: `round(ratio * n_maskable)`, raised to one
/// whenever both the ratio and the maskable count are positive.
pub fn target_count(ratio: f64, n_maskable: usize) -> usize {
    if ratio <= 0.0 || n_maskable == 0 {
        return 0;
    }
    let c = (ratio * n_maskable as f64).round() as usize;
    c.clamp(1, n_maskable)
}

/// Uniform sample of `count` maskable positions without replacement.
pub fn select_random<R: Rng + ?Sized>(seq: &TaggedSequence, count: usize, rng: &mut R) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = seq.maskable().collect();
    if count > eligible.len() {
        return Err(Error::TooManyPositions {
            count,
            available: eligible.len(),
        });
    }
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, eligible.len(), count)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Category weight of every maskable position, in position order.
pub fn position_weights(seq: &TaggedSequence, weights: &WeightVector) -> Vec<f64> {
    seq.maskable().map(|i| weights.get(seq.pos_ids[i])).collect()
}

/// Successive proportional sampling: `count` draws without replacement,
/// each picking a remaining item with probability proportional to its
/// weight. Returns item indices in draw order.
pub fn successive_sample<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Result<Vec<usize>> {
    if count > weights.len() {
        return Err(Error::TooManyPositions {
            count,
            available: weights.len(),
        });
    }
    let mut remaining: Vec<f64> = weights.to_vec();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = remaining.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroWeights);
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, &w) in remaining.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            chosen = Some(i);
            if target < acc {
                break;
            }
        }
        let i = chosen.ok_or(Error::ZeroWeights)?;
        remaining[i] = 0.0;
        out.push(i);
    }
    Ok(out)
}

/// Exact inclusion probability of each item under [`successive_sample`],
/// by dynamic programming over drawn subsets. Exponential in
/// `weights.len()`; intended for small verification cases (at most 24 items).
pub fn inclusion_probabilities(weights: &[f64], count: usize) -> Vec<f64> {
    let n = weights.len();
    assert!(n <= 24, "inclusion_probabilities is exponential in n");
    assert!(count <= n);
    let mut prob = vec![0.0f64; 1 << n];
    prob[0] = 1.0;
    let mut seen = vec![false; 1 << n];
    let mut incl = vec![0.0; n];
    // layer i holds the subsets reachable after i draws
    let mut layer: Vec<usize> = vec![0];
    for _ in 0..count {
        let mut next = Vec::new();
        for &s in &layer {
            let p = prob[s];
            if p == 0.0 {
                continue;
            }
            let rest: f64 = (0..n).filter(|j| s & (1 << j) == 0).map(|j| weights[j]).sum();
            for j in 0..n {
                if s & (1 << j) != 0 || weights[j] <= 0.0 {
                    continue;
                }
                let t = s | (1 << j);
                if !seen[t] {
                    seen[t] = true;
                    next.push(t);
                }
                prob[t] += p * weights[j] / rest;
            }
        }
        layer = next;
    }
    for &s in &layer {
        for (j, v) in incl.iter_mut().enumerate() {
            if s & (1 << j) != 0 {
                *v += prob[s];
            }
        }
    }
    incl
}

/// Samples `count` maskable positions with probability proportional to the
/// weight of their POS category, without replacement.
pub fn select_ptw<R: Rng + ?Sized>(
    seq: &TaggedSequence,
    count: usize,
    weights: &WeightVector,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = seq.maskable().collect();
    if count > eligible.len() {
        return Err(Error::TooManyPositions {
            count,
            available: eligible.len(),
        });
    }
    let w = position_weights(seq, weights);
    let mut picked: Vec<usize> = successive_sample(&w, count, rng)?
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Applies the corruption split to the selected positions.
pub fn corrupt<R: Rng + ?Sized>(
    seq: &TaggedSequence,
    indices: &[usize],
    split: &CorruptSplit,
    vocab_size: usize,
    rng: &mut R,
) -> MaskPlan {
    let mut corrupted_ids = seq.token_ids.clone();
    let mut actions = Vec::with_capacity(indices.len());
    let first_regular = RESERVED_TOKENS.len() as u32;
    for &i in indices {
        debug_assert!(!seq.special_mask[i]);
        let u: f64 = rng.gen();
        let action = if u < split.mask {
            MaskAction::ReplaceWithMask
        } else if u < split.mask + split.random {
            MaskAction::ReplaceWithRandom
        } else {
            MaskAction::KeepOriginal
        };
        let action = match action {
            MaskAction::ReplaceWithMask => {
                corrupted_ids[i] = MASK_ID;
                action
            }
            MaskAction::ReplaceWithRandom if vocab_size as u32 > first_regular => {
                corrupted_ids[i] = rng.gen_range(first_regular..vocab_size as u32);
                action
            }
            _ => MaskAction::KeepOriginal,
        };
        actions.push(action);
    }
    MaskPlan {
        masked: indices.to_vec(),
        actions,
        corrupted_ids,
    }
}

/// Builds the plan for one sequence from a dedicated seed.
pub fn plan_sequence(
    seq: &TaggedSequence,
    ratio: f64,
    policy: &MaskPolicy,
    weights: Option<&WeightVector>,
    vocab_size: usize,
    seed: u64,
) -> Result<MaskPlan> {
    let mut rng = derived_rng(&[seed]);
    let count = target_count(ratio, seq.n_maskable());
    let indices = match (policy.strategy, weights) {
        (Strategy::Ptw, Some(w)) => select_ptw(seq, count, w, &mut rng)?,
        (Strategy::Ptw, None) => {
            return Err(Error::Config("PTW masking requires a weight vector".into()))
        }
        (Strategy::RandomToken, _) => select_random(seq, count, &mut rng)?,
    };
    Ok(corrupt(seq, &indices, &policy.split, vocab_size, &mut rng))
}

/// Seed of batch slot `slot` at training step `step`.
pub fn slot_seed(run_seed: u64, step: u64, slot: usize) -> u64 {
    crate::rng::derive_seed(&[run_seed, STREAM_MASK, step, slot as u64])
}

/// Plans a whole batch. Each slot uses its own derived seed, so parallel
/// and serial construction give identical plans.
pub fn plan_batch(
    seqs: &[&TaggedSequence],
    ratio: f64,
    policy: &MaskPolicy,
    weights: Option<&WeightVector>,
    vocab_size: usize,
    run_seed: u64,
    step: u64,
    parallel: bool,
) -> Result<Vec<MaskPlan>> {
    let build = |(slot, seq): (usize, &&TaggedSequence)| {
        plan_sequence(seq, ratio, policy, weights, vocab_size, slot_seed(run_seed, step, slot))
    };
    if parallel {
        seqs.par_iter().enumerate().map(build).collect()
    } else {
        seqs.iter().enumerate().map(build).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::{CLS_ID, PAD_ID, SEP_ID};
    use crate::corpus::PosCategory;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq_with(cats: &[PosCategory]) -> TaggedSequence {
        let n = cats.len();
        let mut token_ids = vec![CLS_ID];
        token_ids.extend((0..n as u32).map(|i| 10 + i));
        token_ids.extend([SEP_ID, PAD_ID]);
        let mut pos_ids = vec![PosCategory::X];
        pos_ids.extend_from_slice(cats);
        pos_ids.extend([PosCategory::X; 2]);
        let mut special_mask = vec![true];
        special_mask.extend(vec![false; n]);
        special_mask.extend([true, true]);
        TaggedSequence {
            token_ids,
            pos_ids,
            special_mask,
        }
    }

    #[test]
    fn target_count_examples() {
        assert_eq!(target_count(0.15, 100), 15);
        assert_eq!(target_count(0.02, 10), 1);
        assert_eq!(target_count(0.0, 100), 0);
        assert_eq!(target_count(0.3, 0), 0);
        assert_eq!(target_count(0.999, 3), 3);
    }

    #[test]
    fn exhaustive_and_empty_selection() {
        let seq = seq_with(&[PosCategory::Noun; 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select_random(&seq, 6, &mut rng).unwrap(), vec![1, 2, 3, 4, 5, 6]);
        assert!(select_random(&seq, 0, &mut rng).unwrap().is_empty());
        let w = WeightVector(vec![0.9; 17]);
        assert_eq!(select_ptw(&seq, 6, &w, &mut rng).unwrap(), vec![1, 2, 3, 4, 5, 6]);
        assert!(matches!(
            select_random(&seq, 7, &mut rng),
            Err(Error::TooManyPositions { count: 7, available: 6 })
        ));
        assert!(select_ptw(&seq, 7, &w, &mut rng).is_err());
    }

    #[test]
    fn zero_weights_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(successive_sample(&[0.0, 0.0], 1, &mut rng), Err(Error::ZeroWeights)));
    }

    #[test]
    fn exact_inclusion_matches_enumeration() {
        // oracle: enumerate every ordered draw sequence
        fn enumerate(w: &[f64], k: usize, used: &mut Vec<bool>, p: f64, acc: &mut [f64]) {
            if k == 0 {
                for (i, &u) in used.iter().enumerate() {
                    if u {
                        acc[i] += p;
                    }
                }
                return;
            }
            let rest: f64 = w.iter().zip(used.iter()).filter(|(_, &u)| !u).map(|(x, _)| x).sum();
            for i in 0..w.len() {
                if !used[i] {
                    used[i] = true;
                    enumerate(w, k - 1, used, p * w[i] / rest, acc);
                    used[i] = false;
                }
            }
        }
        let w = [0.2, 0.9, 0.5, 0.5, 0.7];
        for k in 0..=w.len() {
            let mut acc = vec![0.0; w.len()];
            enumerate(&w, k, &mut vec![false; w.len()], 1.0, &mut acc);
            let dp = inclusion_probabilities(&w, k);
            for (a, b) in acc.iter().zip(&dp) {
                assert!((a - b).abs() < 1e-12, "k={k}: {acc:?} vs {dp:?}");
            }
            assert!((dp.iter().sum::<f64>() - k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn corrupt_all_mask() {
        let seq = seq_with(&[PosCategory::Noun; 4]);
        let split = CorruptSplit::new(1.0, 0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plan = corrupt(&seq, &[1, 3], &split, 50, &mut rng);
        assert_eq!(plan.actions, vec![MaskAction::ReplaceWithMask; 2]);
        assert_eq!(plan.corrupted_ids[1], MASK_ID);
        assert_eq!(plan.corrupted_ids[3], MASK_ID);
        assert_eq!(plan.corrupted_ids[2], seq.token_ids[2]);
        let labels: Vec<_> = plan.labels(&seq).collect();
        assert_eq!(labels, vec![(1, 10), (3, 12)]);
    }

    #[test]
    fn keep_positions_stay_in_plan() {
        let seq = seq_with(&[PosCategory::Noun; 4]);
        let split = CorruptSplit::new(0.0, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plan = corrupt(&seq, &[2], &split, 50, &mut rng);
        assert_eq!(plan.masked, vec![2]);
        assert_eq!(plan.corrupted_ids, seq.token_ids);
    }

    #[test]
    fn random_replacement_avoids_reserved_ids() {
        let seq = seq_with(&[PosCategory::Noun; 8]);
        let split = CorruptSplit::new(0.0, 1.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let plan = corrupt(&seq, &[1, 2, 3], &split, 12, &mut rng);
            for &i in &plan.masked {
                assert!((5..12).contains(&plan.corrupted_ids[i]));
            }
        }
        // no regular ids at all: fall back to keeping the token
        let plan = corrupt(&seq, &[1], &split, 5, &mut rng);
        assert_eq!(plan.actions, vec![MaskAction::KeepOriginal]);
    }

    #[test]
    fn bad_split() {
        assert!(CorruptSplit::new(0.8, 0.1, 0.2).is_err());
        assert!(CorruptSplit::new(1.1, -0.1, 0.0).is_err());
    }

    #[test]
    fn plans_are_deterministic_and_parallel_safe() {
        let seqs: Vec<TaggedSequence> = (0..16)
            .map(|i| seq_with(&vec![PosCategory::ALL[i % 17]; 5 + i]))
            .collect();
        let refs: Vec<&TaggedSequence> = seqs.iter().collect();
        let w = WeightVector((0..17).map(|k| 0.1 + 0.05 * k as f64).collect());
        for strategy in [Strategy::RandomToken, Strategy::Ptw] {
            let policy = MaskPolicy {
                strategy,
                split: CorruptSplit::default(),
            };
            let a = plan_batch(&refs, 0.3, &policy, Some(&w), 100, 42, 7, false).unwrap();
            let b = plan_batch(&refs, 0.3, &policy, Some(&w), 100, 42, 7, true).unwrap();
            assert_eq!(a, b);
            let c = plan_batch(&refs, 0.3, &policy, Some(&w), 100, 42, 8, false).unwrap();
            assert_ne!(a, c);
            for (plan, seq) in a.iter().zip(&seqs) {
                assert_eq!(plan.masked.len(), target_count(0.3, seq.n_maskable()));
                assert!(plan.masked.iter().all(|&i| !seq.special_mask[i]));
            }
        }
    }

    #[test]
    fn ptw_without_weights_is_an_error() {
        let seq = seq_with(&[PosCategory::Noun; 3]);
        let policy = MaskPolicy {
            strategy: Strategy::Ptw,
            split: CorruptSplit::default(),
        };
        assert!(plan_sequence(&seq, 0.5, &policy, None, 20, 1).is_err());
    }
}
