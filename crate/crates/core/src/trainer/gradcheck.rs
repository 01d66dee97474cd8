//! Finite-difference check of the analytic gradients.

use rand::seq::index::sample;
use serde::Serialize;

use super::model::{random_items, GradFault, Model, ModelConfig, Params, SequenceBatchItem};
use crate::error::Result;
use crate::rng::{derived_rng, STREAM_GRADCHECK};

/// Smallest denominator in the relative error. Parameters whose gradient is
/// below this are judged by absolute error, since central differences carry
/// an `O(h^2)` truncation term that does not shrink with the gradient.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Tensor and element index of the worst parameter.
    pub worst: (String, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub samples: usize,
    pub h: f64,
    pub batch: usize,
    pub targets_per_seq: usize,
    pub fault: GradFault,
    /// Smallest denominator of the relative error.
    pub rel_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            samples: 300,
            h: 1e-3,
            batch: 2,
            targets_per_seq: 3,
            fault: GradFault::None,
            rel_floor: REL_FLOOR,
        }
    }
}

/// The small configuration used for gradient checking.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        hidden: 8,
        heads: 2,
        ff: 16,
        vocab_size: 20,
        seq_len: 6,
        tied: false,
        init_std: 0.02,
    }
}

pub fn grad_check(config: &ModelConfig, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut model = Model::<f64>::new(*config, seed)?;
    // nonzero LayerNorm and bias parameters, so their gradients are exercised
    let mut rng = derived_rng(&[seed, STREAM_GRADCHECK]);
    // unit-scale embeddings keep the first LayerNorm away from its high
    // curvature region near zero input variance
    if config.init_std > 0.0 {
        let k = 1.0 / config.init_std;
        model.params.tok_emb.mapv_inplace(|v| v * k);
        model.params.pos_emb.mapv_inplace(|v| v * k);
    }
    for t in model.params.tensors_mut() {
        for v in t.iter_mut() {
            *v += rand::Rng::gen_range(&mut rng, -0.1..0.1);
        }
    }
    let data = random_items(config, opts.batch, opts.targets_per_seq, &mut rng);
    let batch: Vec<SequenceBatchItem<'_>> = data
        .iter()
        .map(|(ids, targets)| SequenceBatchItem {
            input_ids: ids,
            targets: targets.clone(),
        })
        .collect();

    let mut grads = Params::zeros(config);
    model.loss_and_grad_faulty(&batch, &mut grads, opts.fault)?;
    let info = model.params.tensor_info();
    let offsets: Vec<usize> = info
        .iter()
        .scan(0, |acc, t| {
            let start = *acc;
            *acc += t.len;
            Some(start)
        })
        .collect();
    let total: usize = info.iter().map(|t| t.len).sum();
    let picks = sample(&mut rng, total, opts.samples.min(total)).into_vec();

    let analytic_flat: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for flat in picks {
        let ti = offsets.partition_point(|&o| o <= flat) - 1;
        let idx = flat - offsets[ti];
        let orig = model.params.tensors()[ti][idx];
        model.params.tensors_mut()[ti][idx] = orig + opts.h;
        let plus = model.loss(&batch)?.mean;
        model.params.tensors_mut()[ti][idx] = orig - opts.h;
        let minus = model.loss(&batch)?.mean;
        model.params.tensors_mut()[ti][idx] = orig;
        let numeric = (plus - minus) / (2.0 * opts.h);
        let analytic = analytic_flat[flat];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(opts.rel_floor);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = (info[ti].name.clone(), idx);
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
