//! Checkpoint file format.
//!
//! ```text
//! magic     8 bytes  "TVMLMCKP"
//! version   u32 LE
//! header    u64 LE length, then JSON (CheckpointHeader)
//! payload   f32 LE: every parameter tensor, then every first moment, then
//!           every second moment, in tensor order
//! checksum  u64 LE, FNV-1a of all preceding bytes
//! ```
//!
//! Masking, shuffling and initialization streams are derived from the seed
//! and step, so no generator state is stored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig, Params, Scalar, TensorInfo};
use super::optim::AdamW;
use super::{StepMetrics, TrainConfig, TrainState, Trainer};
use crate::corpus::vocab::{fnv1a, FNV_OFFSET};
use crate::error::{Error, Result};
use crate::ptw::CategoryLossTracker;

pub const MAGIC: &[u8; 8] = b"TVMLMCKP";
pub const VERSION: u32 = 1;

/// Bounds applied before allocating anything from an untrusted header.
const MAX_DIM: usize = 1 << 20;
const MAX_LAYERS: usize = 1 << 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: TrainConfig,
    pub step: u64,
    pub masked_total: u64,
    pub vocab_fingerprint: u64,
    pub tracker: CategoryLossTracker,
    pub last: Option<StepMetrics>,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub state: TrainState,
}

/// Tensor layout implied by a model configuration, without allocating.
pub fn tensor_layout(cfg: &ModelConfig) -> Vec<TensorInfo> {
    let d = cfg.hidden;
    let mut out = Vec::new();
    let mut push = |name: String, len: usize, decay: bool| out.push(TensorInfo { name, len, decay });
    push("tok_emb".into(), cfg.vocab_size * d, true);
    push("pos_emb".into(), cfg.seq_len * d, true);
    for i in 0..cfg.layers {
        push(format!("layer{i}.ln1_g"), d, false);
        push(format!("layer{i}.ln1_b"), d, false);
        push(format!("layer{i}.w_qkv"), 3 * d * d, true);
        push(format!("layer{i}.b_qkv"), 3 * d, false);
        push(format!("layer{i}.w_o"), d * d, true);
        push(format!("layer{i}.b_o"), d, false);
        push(format!("layer{i}.ln2_g"), d, false);
        push(format!("layer{i}.ln2_b"), d, false);
        push(format!("layer{i}.w_ff1"), d * cfg.ff, true);
        push(format!("layer{i}.b_ff1"), cfg.ff, false);
        push(format!("layer{i}.w_ff2"), cfg.ff * d, true);
        push(format!("layer{i}.b_ff2"), d, false);
    }
    push("lnf_g".into(), d, false);
    push("lnf_b".into(), d, false);
    if !cfg.tied {
        push("out_w".into(), cfg.vocab_size * d, true);
    }
    push("out_b".into(), cfg.vocab_size, false);
    out
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer<'_>) -> Self {
        Self {
            header: CheckpointHeader {
                config: trainer.config.clone(),
                step: trainer.state.step,
                masked_total: trainer.state.masked_total,
                vocab_fingerprint: trainer.vocab_fingerprint,
                tracker: trainer.state.tracker.clone(),
                last: trainer.state.last.clone(),
                tensors: trainer.state.model.params.tensor_info(),
            },
            state: trainer.state.clone(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let n = self.state.model.params.num_params();
        let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + 3 * n * f32::BYTES + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let moments = self.state.optim.m.iter().chain(&self.state.optim.v).map(|t| t.as_slice());
        for t in self.state.model.params.tensors().into_iter().chain(moments) {
            for &v in t {
                v.put_le(&mut out);
            }
        }
        let sum = fnv1a(FNV_OFFSET, &out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        if bytes.len() < 8 + 4 + 8 + 8 {
            return Err(bad("file too short"));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv1a(FNV_OFFSET, body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
            return Err(bad("checksum mismatch"));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes"));
        let rest = &body[20..];
        if header_len > rest.len() as u64 {
            return Err(bad("truncated header"));
        }
        let (header_bytes, payload) = rest.split_at(header_len as usize);
        let header: CheckpointHeader =
            serde_json::from_slice(header_bytes).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let cfg = header.config.model;
        let dims = [cfg.hidden, cfg.heads, cfg.ff, cfg.vocab_size, cfg.seq_len];
        if dims.iter().any(|&d| d > MAX_DIM) || cfg.layers > MAX_LAYERS {
            return Err(bad("model dimensions out of range"));
        }
        header.config.validate()?;
        if header.tensors != tensor_layout(&cfg) {
            return Err(bad("tensor layout does not match the model configuration"));
        }
        if header.tracker.cum_loss().len() != crate::corpus::NUM_CATEGORIES
            || header.tracker.observed().len() != crate::corpus::NUM_CATEGORIES
        {
            return Err(bad("tracker has the wrong number of categories"));
        }
        let total: usize = header.tensors.iter().map(|t| t.len).sum();
        if payload.len() as u128 != 3 * total as u128 * f32::BYTES as u128 {
            return Err(bad("payload size does not match the tensor layout"));
        }

        let mut values = payload.chunks_exact(f32::BYTES).map(f32::get_le);
        let mut params = Params::<f32>::zeros(&cfg);
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = values.next().expect("sized above");
            }
        }
        let mut read_moments = || -> Vec<Vec<f32>> {
            header
                .tensors
                .iter()
                .map(|t| values.by_ref().take(t.len).collect())
                .collect()
        };
        let m = read_moments();
        let v = read_moments();
        if !params.all_finite() {
            return Err(bad("non-finite parameters"));
        }
        let optim = AdamW::from_state(header.config.optim, &header.tensors, m, v, header.step);
        let state = TrainState {
            model: Model { config: cfg, params },
            optim,
            tracker: header.tracker.clone(),
            step: header.step,
            masked_total: header.masked_total,
            last: header.last.clone(),
        };
        Ok(Self { header, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::gradcheck::tiny_config;
    use crate::trainer::MemorySink;

    #[test]
    fn layout_matches_params() {
        for tied in [true, false] {
            let cfg = ModelConfig { tied, ..tiny_config() };
            assert_eq!(Params::<f32>::zeros(&cfg).tensor_info(), tensor_layout(&cfg));
        }
    }

    fn trained() -> (Vec<crate::corpus::TaggedSequence>, TrainConfig) {
        let (data, v) = crate::trainer::tests::small_data();
        let mut cfg = TrainConfig::default();
        cfg.model = ModelConfig {
            layers: 1,
            hidden: 8,
            heads: 2,
            ff: 8,
            vocab_size: v,
            seq_len: 32,
            tied: false,
            init_std: 0.02,
        };
        cfg.schedule.total_steps = 6;
        cfg.batch_size = 2;
        (data, cfg)
    }

    #[test]
    fn round_trip_and_resume() {
        let (data, cfg) = trained();
        let mut tr = Trainer::new(cfg.clone(), &data, 42).unwrap();
        let mut first = MemorySink::default();
        tr.run(3, &mut first).unwrap();
        let ck = Checkpoint::from_trainer(&tr);
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.header.vocab_fingerprint, 42);

        let mut resumed = Trainer::with_state(back.header.config.clone(), &data, 42, back.state).unwrap();
        resumed.run(6, &mut first).unwrap();
        let mut whole = MemorySink::default();
        Trainer::new(cfg, &data, 42).unwrap().run(6, &mut whole).unwrap();
        assert_eq!(first.steps, whole.steps);
        assert_eq!(first.snapshots, whole.snapshots);
    }

    #[test]
    fn rejects_corruption() {
        let (data, cfg) = trained();
        let tr = Trainer::new(cfg, &data, 1).unwrap();
        let bytes = Checkpoint::from_trainer(&tr).encode();
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(Checkpoint::decode(&flipped), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::decode(b"TVMLMCKP").is_err());
        let mut wrong_version = bytes;
        wrong_version[8] = 9;
        assert!(Checkpoint::decode(&wrong_version).is_err());
    }
}
