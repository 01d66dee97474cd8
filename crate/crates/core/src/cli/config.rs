//! Run configuration file: one `section.key = value` per line, `#` starts a
//! comment, blank lines are ignored.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::masker::{CorruptSplit, MaskPolicy, Strategy};
use crate::ptw::LossMode;
use crate::schedule::{ScheduleKind, ScheduleSpec};
use crate::trainer::{AdamConfig, LrConfig, LrShape, ModelConfig, PtwConfig, TrainConfig};

/// Parses `key = value` lines. Keys are returned in file order with their
/// 1-based line numbers.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out: Vec<(String, String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(line_no, format!("expected `key = value`, got {line:?}")))?;
        let key = key.trim();
        let value = value.trim();
        let valid_key = !key.is_empty()
            && key
                .split('.')
                .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
        if !valid_key {
            return Err(Error::parse(line_no, format!("invalid key {key:?}")));
        }
        if let Some((_, _, first)) = out.iter().find(|(k, _, _)| k == key) {
            return Err(Error::parse(line_no, format!("duplicate key {key:?} (first set on line {first})")));
        }
        out.push((key.to_owned(), value.to_owned(), line_no));
    }
    Ok(out)
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub checkpoint_every: u64,
    pub batch_size: usize,
    pub parallel_masking: bool,
    /// Directory written by `prepare`.
    pub corpus_dir: PathBuf,
    pub schedule_kind: ScheduleKind,
    pub p: f64,
    pub total_steps: u64,
    /// `None` uses the kind's default floor.
    pub floor: Option<f64>,
    pub peak_scale: f64,
    pub ptw: PtwConfig,
    pub mask: MaskPolicy,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff: usize,
    /// `None` takes the value from the prepared corpus.
    pub vocab_size: Option<usize>,
    pub seq_len: Option<usize>,
    pub tied: bool,
    pub init_std: f64,
    pub lr: LrConfig,
    pub optim: AdamConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: t.seed,
            out: PathBuf::from("runs/run"),
            checkpoint_every: t.checkpoint_every,
            batch_size: t.batch_size,
            parallel_masking: t.parallel_masking,
            corpus_dir: PathBuf::from("prepared"),
            schedule_kind: t.schedule.kind,
            p: t.schedule.p,
            total_steps: t.schedule.total_steps,
            floor: None,
            peak_scale: t.schedule.peak_scale,
            ptw: t.ptw,
            mask: t.mask,
            layers: t.model.layers,
            hidden: t.model.hidden,
            heads: t.model.heads,
            ff: t.model.ff,
            vocab_size: None,
            seq_len: None,
            tied: t.model.tied,
            init_std: t.model.init_std,
            lr: t.lr,
            optim: t.optim,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

fn show_auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_owned(), T::to_string)
}

fn parse_split(key: &str, value: &str) -> Result<CorruptSplit> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| parse_value(key, p.trim()))
        .collect::<Result<_>>()?;
    match parts[..] {
        [mask, random, keep] => CorruptSplit::new(mask, random, keep),
        _ => Err(Error::Config(format!("{key}: expected three comma-separated fractions"))),
    }
}

impl RunConfig {
    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "run.seed" => self.seed = parse_value(key, v)?,
            "run.out" => self.out = PathBuf::from(v),
            "run.checkpoint_every" => self.checkpoint_every = parse_value(key, v)?,
            "run.batch_size" => self.batch_size = parse_value(key, v)?,
            "run.parallel_masking" => self.parallel_masking = parse_bool(key, v)?,
            "corpus.dir" => self.corpus_dir = PathBuf::from(v),
            "schedule.kind" => self.schedule_kind = v.parse()?,
            "schedule.p" => self.p = parse_value(key, v)?,
            "schedule.T" => self.total_steps = parse_value(key, v)?,
            "schedule.floor" => self.floor = parse_auto(key, v)?,
            "schedule.peak_scale" => self.peak_scale = parse_value(key, v)?,
            "ptw.beta" => self.ptw.beta = parse_value(key, v)?,
            "ptw.mu" => self.ptw.mu = parse_value(key, v)?,
            "ptw.loss_mode" => self.ptw.loss_mode = v.parse::<LossMode>()?,
            "ptw.snapshot_every" => self.ptw.snapshot_every = parse_value(key, v)?,
            "mask.strategy" => self.mask.strategy = v.parse::<Strategy>()?,
            "mask.corrupt_split" => self.mask.split = parse_split(key, v)?,
            "model.layers" => self.layers = parse_value(key, v)?,
            "model.hidden" => self.hidden = parse_value(key, v)?,
            "model.heads" => self.heads = parse_value(key, v)?,
            "model.ff" => self.ff = parse_value(key, v)?,
            "model.vocab_size" => self.vocab_size = parse_auto(key, v)?,
            "model.seq_len" => self.seq_len = parse_auto(key, v)?,
            "model.tied" => self.tied = parse_bool(key, v)?,
            "model.init_std" => self.init_std = parse_value(key, v)?,
            "lr.base" => self.lr.base = parse_value(key, v)?,
            "lr.warmup" => self.lr.warmup_steps = parse_value(key, v)?,
            "lr.shape" => {
                self.lr.shape = match v {
                    "coupled" => None,
                    other => Some(other.parse::<LrShape>()?),
                }
            }
            "optim.beta1" => self.optim.beta1 = parse_value(key, v)?,
            "optim.beta2" => self.optim.beta2 = parse_value(key, v)?,
            "optim.eps" => self.optim.eps = parse_value(key, v)?,
            "optim.weight_decay" => self.optim.weight_decay = parse_value(key, v)?,
            "optim.clip_norm" => self.optim.clip_norm = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let s = &self.mask.split;
        vec![
            ("run.seed", self.seed.to_string()),
            ("run.out", self.out.display().to_string()),
            ("run.checkpoint_every", self.checkpoint_every.to_string()),
            ("run.batch_size", self.batch_size.to_string()),
            ("run.parallel_masking", self.parallel_masking.to_string()),
            ("corpus.dir", self.corpus_dir.display().to_string()),
            ("schedule.kind", self.schedule_kind.to_string()),
            ("schedule.p", self.p.to_string()),
            ("schedule.T", self.total_steps.to_string()),
            ("schedule.floor", show_auto(&self.floor)),
            ("schedule.peak_scale", self.peak_scale.to_string()),
            ("ptw.beta", self.ptw.beta.to_string()),
            ("ptw.mu", self.ptw.mu.to_string()),
            ("ptw.loss_mode", self.ptw.loss_mode.to_string()),
            ("ptw.snapshot_every", self.ptw.snapshot_every.to_string()),
            ("mask.strategy", self.mask.strategy.to_string()),
            ("mask.corrupt_split", format!("{},{},{}", s.mask, s.random, s.keep)),
            ("model.layers", self.layers.to_string()),
            ("model.hidden", self.hidden.to_string()),
            ("model.heads", self.heads.to_string()),
            ("model.ff", self.ff.to_string()),
            ("model.vocab_size", show_auto(&self.vocab_size)),
            ("model.seq_len", show_auto(&self.seq_len)),
            ("model.tied", self.tied.to_string()),
            ("model.init_std", self.init_std.to_string()),
            ("lr.base", self.lr.base.to_string()),
            ("lr.warmup", self.lr.warmup_steps.to_string()),
            ("lr.shape", self.lr.shape.map_or_else(|| "coupled".to_owned(), |s| s.to_string())),
            ("optim.beta1", self.optim.beta1.to_string()),
            ("optim.beta2", self.optim.beta2.to_string()),
            ("optim.eps", self.optim.eps.to_string()),
            ("optim.weight_decay", self.optim.weight_decay.to_string()),
            ("optim.clip_norm", self.optim.clip_norm.to_string()),
        ]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value, line) in parse_pairs(text)? {
            cfg.set(&key, &value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {line}: {m}")),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.pairs() {
            let this = key.split('.').next().unwrap_or_default();
            if this != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = this;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            Error::Parse { line, message } => Error::Config(format!("{}:{line}: {message}", path.display())),
            other => other,
        })
    }

    pub fn schedule_spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            kind: self.schedule_kind,
            p: self.p,
            total_steps: self.total_steps,
            floor: self.floor.unwrap_or_else(|| self.schedule_kind.default_floor()),
            peak_scale: self.peak_scale,
        }
    }

    /// Fills corpus-derived values and builds the trainer configuration.
    pub fn resolve(&self, corpus_vocab: usize, corpus_seq_len: usize) -> Result<(RunConfig, TrainConfig)> {
        let mut resolved = self.clone();
        let vocab = *resolved.vocab_size.get_or_insert(corpus_vocab);
        let seq_len = *resolved.seq_len.get_or_insert(corpus_seq_len);
        if vocab != corpus_vocab {
            return Err(Error::Config(format!(
                "model.vocab_size = {vocab} but the corpus vocabulary has {corpus_vocab} tokens"
            )));
        }
        if seq_len < corpus_seq_len {
            return Err(Error::Config(format!(
                "model.seq_len = {seq_len} is shorter than the packed sequences ({corpus_seq_len})"
            )));
        }
        resolved.floor = Some(self.schedule_spec().floor);
        let train = TrainConfig {
            model: ModelConfig {
                layers: self.layers,
                hidden: self.hidden,
                heads: self.heads,
                ff: self.ff,
                vocab_size: vocab,
                seq_len,
                tied: self.tied,
                init_std: self.init_std,
            },
            schedule: self.schedule_spec(),
            mask: self.mask,
            ptw: self.ptw,
            lr: self.lr,
            optim: self.optim,
            batch_size: self.batch_size,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            parallel_masking: self.parallel_masking,
        };
        train.validate()?;
        Ok((resolved, train))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# header\n\nschedule.kind = cosine-decay  # trailing\nschedule.T=50\n").unwrap();
        assert_eq!(c.schedule_kind, ScheduleKind::CosineDecay);
        assert_eq!(c.total_steps, 50);
    }

    #[test]
    fn errors_name_the_line() {
        match RunConfig::parse("schedule.p = 0.1\nbogus line\n") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match RunConfig::parse("schedule.p = 0.1\nschedule.q = 3\n") {
            Err(Error::Config(m)) => assert!(m.starts_with("line 2"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            RunConfig::parse("a.b = 1\na.b = 2"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn resolve_fills_corpus_values() {
        let c = RunConfig::default();
        let (r, t) = c.resolve(500, 64).unwrap();
        assert_eq!(r.vocab_size, Some(500));
        assert_eq!(t.model.seq_len, 64);
        assert_eq!(r.floor, Some(0.0));
        let mut c = RunConfig::default();
        c.vocab_size = Some(400);
        assert!(matches!(c.resolve(500, 64), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut c = RunConfig::default();
        c.set("schedule.p", "0.9").unwrap();
        assert!(matches!(c.resolve(500, 64), Err(Error::Config(_))));
        assert!(c.clone().set("mask.corrupt_split", "0.5,0.5").is_err());
        assert!(c.clone().set("mask.corrupt_split", "0.5,0.4,0.4").is_err());
        assert!(c.clone().set("model.tied", "yes").is_err());
    }

    proptest! {
        #[test]
        fn random_round_trip(
            seed in any::<u64>(),
            p in 0.001f64..0.5,
            beta in 0.01f64..0.999,
            lr in 1e-6f64..1.0,
            floor in proptest::option::of(0.0f64..0.01),
            kind in 0usize..7,
            vocab in proptest::option::of(5usize..100_000),
        ) {
            let mut c = RunConfig::default();
            c.seed = seed;
            c.p = p;
            c.ptw.beta = beta;
            c.lr.base = lr;
            c.floor = floor;
            c.schedule_kind = ScheduleKind::ALL[kind];
            c.vocab_size = vocab;
            c.lr.shape = Some(LrShape::Cosine);
            prop_assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        }
    }
}
