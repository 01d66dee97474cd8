//! Command implementations. Each returns data or writes to the given
//! writer; argument parsing and exit codes live in the parent module.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run_dir::{read_jsonl, truncate_streams, FileSink, RunDir, CONFIG_FILE, METRICS_FILE, STATS_FILE, TRACKER_FILE};
use crate::corpus::synth::{generate, write_tagged, SynthConfig};
use crate::corpus::{
    build_vocab, category_counts, open_tagged_corpus, prepare_sequences, read_sequence_cache, word_forms,
    write_sequence_cache, PosCategory, Sentence, TaggedSequence, Vocabulary, NUM_CATEGORIES,
};
use crate::error::{Error, Result};
use crate::masker::{plan_sequence, MaskAction, MaskPolicy, Strategy};
use crate::ptw::WeightVector;
use crate::rng::derive_seed;
use crate::schedule::ScheduleSpec;
use crate::trainer::{eval_mlm, Checkpoint, EvalReport, StepMetrics, TrackerRow, Trainer};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const SEQUENCES_FILE: &str = "sequences.jsonl";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn refuse_existing(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(Error::Config(format!("{} already exists (use --force to overwrite)", p.display()))),
        None => Ok(()),
    }
}

pub fn cmd_synth(out: &Path, cfg: &SynthConfig, force: bool) -> Result<usize> {
    refuse_existing(&[out.to_owned()], force)?;
    let sentences = generate(cfg);
    let mut w = create_file(out)?;
    write_tagged(&mut w, &sentences).map_err(io_err(out))?;
    w.flush().map_err(io_err(out))?;
    Ok(sentences.iter().map(Vec::len).sum())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryStat {
    pub category: String,
    /// Tagged words in the input.
    pub words: u64,
    /// Non-special subword tokens in the packed sequences.
    pub tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: u64,
    pub words: u64,
    pub unknown_tags: u64,
    pub sequences: u64,
    pub tokens: u64,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub vocab_fingerprint: u64,
    pub categories: Vec<CategoryStat>,
}

impl CorpusStats {
    pub fn tokens_of(&self, c: PosCategory) -> u64 {
        self.categories
            .iter()
            .find(|s| s.category == c.name())
            .map_or(0, |s| s.tokens)
    }

    /// Categories with at least one training token.
    pub fn present(&self) -> Vec<PosCategory> {
        PosCategory::ALL
            .into_iter()
            .filter(|c| self.tokens_of(*c) > 0)
            .collect()
    }
}

/// A directory written by [`cmd_prepare`].
pub struct PreparedCorpus {
    pub vocab: Vocabulary,
    pub sequences: Vec<TaggedSequence>,
    pub stats: CorpusStats,
}

impl PreparedCorpus {
    pub fn load(dir: &Path) -> Result<Self> {
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        let seq_path = dir.join(SEQUENCES_FILE);
        let f = File::open(&seq_path).map_err(io_err(&seq_path))?;
        let sequences = read_sequence_cache(BufReader::new(f), vocab.len()).map_err(|e| match e {
            Error::Parse { line, message } => Error::Other(format!("{}:{line}: {message}", seq_path.display())),
            other => other,
        })?;
        let stats = load_stats(&dir.join(STATS_FILE))?;
        if stats.vocab_fingerprint != vocab.fingerprint() {
            return Err(Error::VocabMismatch {
                checkpoint: stats.vocab_fingerprint,
                corpus: vocab.fingerprint(),
            });
        }
        Ok(Self { vocab, sequences, stats })
    }

    pub fn seq_len(&self) -> usize {
        self.sequences.iter().map(TaggedSequence::len).max().unwrap_or(0)
    }
}

pub fn load_stats(path: &Path) -> Result<CorpusStats> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Other(format!("{}: {e}", path.display())))
}

fn read_sentences(input: &Path) -> Result<(Vec<Sentence>, u64)> {
    let mut reader = open_tagged_corpus(input)?;
    let mut sentences = Vec::new();
    for s in reader.by_ref() {
        sentences.push(s.map_err(|e| match e {
            Error::Parse { line, message } => Error::Other(format!("{}:{line}: {message}", input.display())),
            other => other,
        })?);
    }
    if sentences.is_empty() {
        return Err(Error::Other(format!("{}: corpus contains no sentences", input.display())));
    }
    Ok((sentences, reader.unknown_tags() as u64))
}

/// Learns (or loads) a vocabulary, packs the corpus, and writes the vocab,
/// sequence cache and statistics into `out`.
pub fn cmd_prepare(
    input: &Path,
    out: &Path,
    vocab_size: usize,
    seq_len: usize,
    existing_vocab: Option<&Path>,
    force: bool,
) -> Result<CorpusStats> {
    let targets = [out.join(VOCAB_FILE), out.join(SEQUENCES_FILE), out.join(STATS_FILE)];
    refuse_existing(&targets, force)?;
    let (sentences, unknown_tags) = read_sentences(input)?;
    let vocab = match existing_vocab {
        Some(p) => Vocabulary::load(p)?,
        None => build_vocab(word_forms(&sentences), vocab_size)?,
    };
    let sequences = prepare_sequences(&sentences, &vocab, seq_len)?;

    let mut words = [0u64; NUM_CATEGORIES];
    for w in sentences.iter().flatten() {
        words[w.pos.id()] += 1;
    }
    let tokens = category_counts(&sequences);
    let stats = CorpusStats {
        sentences: sentences.len() as u64,
        words: words.iter().sum(),
        unknown_tags,
        sequences: sequences.len() as u64,
        tokens: tokens.iter().sum(),
        vocab_size: vocab.len(),
        seq_len,
        vocab_fingerprint: vocab.fingerprint(),
        categories: PosCategory::ALL
            .iter()
            .map(|c| CategoryStat {
                category: c.name().to_owned(),
                words: words[c.id()],
                tokens: tokens[c.id()],
            })
            .collect(),
    };

    fs::create_dir_all(out).map_err(io_err(out))?;
    vocab.save(&targets[0])?;
    let mut w = create_file(&targets[1])?;
    write_sequence_cache(&mut w, &sequences).map_err(io_err(&targets[1]))?;
    w.flush().map_err(io_err(&targets[1]))?;
    let json = serde_json::to_string_pretty(&stats).map_err(|e| Error::Other(e.to_string()))?;
    fs::write(&targets[2], json + "\n").map_err(io_err(&targets[2]))?;
    Ok(stats)
}

/// Command-line values that replace configuration keys.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub out: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.steps {
            cfg.total_steps = t;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(c) = &self.corpus {
            cfg.corpus_dir = c.clone();
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    pub force: bool,
    pub resume: bool,
    /// Stop once this many steps are complete, as if interrupted.
    pub stop_after: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub resumed_from: Option<u64>,
    pub steps: u64,
    pub total_steps: u64,
    pub masked_total: u64,
    pub last: Option<StepMetrics>,
}

pub fn cmd_train(config_path: &Path, overrides: &Overrides, opts: TrainOptions) -> Result<TrainSummary> {
    let mut cfg = RunConfig::load(config_path)?;
    overrides.apply(&mut cfg);
    let corpus = PreparedCorpus::load(&cfg.corpus_dir)?;
    let (resolved, train_cfg) = cfg.resolve(corpus.vocab.len(), corpus.seq_len())?;

    let dir = RunDir::new(&resolved.out);
    fs::create_dir_all(&dir.root).map_err(io_err(&dir.root))?;
    let _lock = dir.lock()?;
    let fingerprint = corpus.vocab.fingerprint();

    let mut resumed_from = None;
    let mut trainer = if opts.resume && dir.has_run() {
        let saved = RunConfig::load(&dir.path(CONFIG_FILE))?;
        if saved != resolved {
            return Err(Error::Config(format!(
                "configuration differs from the one recorded in {}",
                dir.path(CONFIG_FILE).display()
            )));
        }
        match dir.checkpoints()?.last() {
            Some(&step) => {
                let ck = Checkpoint::load(&dir.checkpoint_path(step))?;
                if ck.header.vocab_fingerprint != fingerprint {
                    return Err(Error::VocabMismatch {
                        checkpoint: ck.header.vocab_fingerprint,
                        corpus: fingerprint,
                    });
                }
                if ck.header.config != train_cfg {
                    return Err(Error::Checkpoint("training configuration differs from the checkpoint".into()));
                }
                truncate_streams(&dir, step)?;
                resumed_from = Some(step);
                log::info!("resuming from step {step}");
                Trainer::with_state(train_cfg, &corpus.sequences, fingerprint, ck.state)?
            }
            None => {
                dir.reset_streams()?;
                Trainer::new(train_cfg, &corpus.sequences, fingerprint)?
            }
        }
    } else {
        if dir.has_run() {
            if !opts.force {
                return Err(Error::RunExists(dir.root.clone()));
            }
            dir.clear()?;
        }
        let trainer = Trainer::new(train_cfg, &corpus.sequences, fingerprint)?;
        fs::write(dir.path(CONFIG_FILE), resolved.to_text()).map_err(io_err(&dir.path(CONFIG_FILE)))?;
        let stats = serde_json::to_string_pretty(&corpus.stats).map_err(|e| Error::Other(e.to_string()))?;
        fs::write(dir.path(STATS_FILE), stats + "\n").map_err(io_err(&dir.path(STATS_FILE)))?;
        trainer
    };

    let mut sink = FileSink::open(&dir)?;
    let until = opts.stop_after.unwrap_or(u64::MAX);
    let result = trainer.run(until, &mut sink);
    sink.flush()?;
    result?;
    Ok(TrainSummary {
        run_dir: dir.root.clone(),
        resumed_from,
        steps: trainer.state.step,
        total_steps: trainer.config.total_steps(),
        masked_total: trainer.state.masked_total,
        last: trainer.state.last.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportWhat {
    Schedule,
    Losses,
    Weights,
    Metrics,
}

pub fn write_schedule_csv<W: Write>(spec: &ScheduleSpec, mut out: W) -> Result<()> {
    spec.validate()?;
    let io = |e| Error::Other(format!("write failed: {e}"));
    writeln!(out, "step,ratio").map_err(io)?;
    for (t, r) in spec.curve() {
        writeln!(out, "{t},{r}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn cmd_export<W: Write>(run: &Path, what: ExportWhat, mut out: W) -> Result<()> {
    let dir = RunDir::new(run);
    if !dir.path(CONFIG_FILE).exists() {
        return Err(Error::Other(format!("{} is not a run directory", run.display())));
    }
    let io = |e| Error::Other(format!("write failed: {e}"));
    match what {
        ExportWhat::Schedule => {
            let cfg = RunConfig::load(&dir.path(CONFIG_FILE))?;
            write_schedule_csv(&cfg.schedule_spec(), &mut out)?;
        }
        ExportWhat::Losses | ExportWhat::Weights => {
            let present: Vec<&str> = load_stats(&dir.path(STATS_FILE))?
                .present()
                .iter()
                .map(|c| c.name())
                .collect();
            let rows: Vec<TrackerRow> = read_jsonl(&dir.path(TRACKER_FILE))?;
            let column = if what == ExportWhat::Losses { "cum_loss" } else { "weight" };
            writeln!(out, "step,category,{column}").map_err(io)?;
            for r in rows.iter().filter(|r| present.contains(&r.category_name.as_str())) {
                let v = if what == ExportWhat::Losses { r.cum_loss } else { r.weight };
                writeln!(out, "{},{},{v}", r.step, r.category_name).map_err(io)?;
            }
        }
        ExportWhat::Metrics => {
            let rows: Vec<StepMetrics> = read_jsonl(&dir.path(METRICS_FILE))?;
            writeln!(out, "step,loss,ratio,lr,masked").map_err(io)?;
            for r in rows {
                writeln!(out, "{},{},{},{},{}", r.step, r.loss, r.ratio, r.lr, r.masked).map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointSelector {
    All,
    Last,
    Step(u64),
}

impl std::str::FromStr for CheckpointSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "last" => Ok(Self::Last),
            n => n
                .parse()
                .map(Self::Step)
                .map_err(|_| Error::Config(format!("checkpoint selector must be all, last or a step, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckpointEval {
    pub step: u64,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// Evaluates the selected checkpoints of a run on a prepared held-out set.
pub fn cmd_eval(run: &Path, selector: CheckpointSelector, heldout: &Path, seed: u64) -> Result<Vec<CheckpointEval>> {
    let dir = RunDir::new(run);
    let available = dir.checkpoints()?;
    if available.is_empty() {
        return Err(Error::Other(format!("{} has no checkpoints", run.display())));
    }
    let steps = match selector {
        CheckpointSelector::All => available,
        CheckpointSelector::Last => vec![*available.last().expect("non-empty")],
        CheckpointSelector::Step(s) if available.contains(&s) => vec![s],
        CheckpointSelector::Step(s) => {
            return Err(Error::Other(format!("{} has no checkpoint at step {s}", run.display())))
        }
    };
    let corpus = PreparedCorpus::load(heldout)?;
    let mut out = Vec::new();
    for step in steps {
        let ck = Checkpoint::load(&dir.checkpoint_path(step))?;
        if ck.header.vocab_fingerprint != corpus.vocab.fingerprint() {
            return Err(Error::VocabMismatch {
                checkpoint: ck.header.vocab_fingerprint,
                corpus: corpus.vocab.fingerprint(),
            });
        }
        let report = eval_mlm(&ck.state.model, &corpus.sequences, crate::trainer::EVAL_RATIO, seed)?;
        out.push(CheckpointEval { step, report });
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct PlanDump {
    pub sequence: usize,
    pub masked: Vec<usize>,
    pub categories: Vec<&'static str>,
    pub actions: Vec<MaskAction>,
    pub corrupted_ids: Vec<u32>,
}

/// Mask plans for the first `limit` sequences of a prepared corpus.
pub fn cmd_mask_debug(
    corpus_dir: &Path,
    ratio: f64,
    strategy: Strategy,
    weights: Option<WeightVector>,
    seed: u64,
    limit: usize,
) -> Result<Vec<PlanDump>> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!("ratio {ratio} outside [0, 1)")));
    }
    let corpus = PreparedCorpus::load(corpus_dir)?;
    let policy = MaskPolicy {
        strategy,
        ..MaskPolicy::default()
    };
    let weights = match strategy {
        Strategy::Ptw => Some(weights.unwrap_or_else(|| WeightVector::uniform(NUM_CATEGORIES))),
        Strategy::RandomToken => None,
    };
    corpus
        .sequences
        .iter()
        .take(limit)
        .enumerate()
        .map(|(i, seq)| {
            let plan = plan_sequence(seq, ratio, &policy, weights.as_ref(), corpus.vocab.len(), derive_seed(&[seed, i as u64]))?;
            Ok(PlanDump {
                sequence: i,
                categories: plan.masked.iter().map(|&p| seq.pos_ids[p].name()).collect(),
                masked: plan.masked,
                actions: plan.actions,
                corrupted_ids: plan.corrupted_ids,
            })
        })
        .collect()
}
