//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 when a
//! command aborts at runtime.

pub mod commands;
pub mod config;
pub mod run_dir;

use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::corpus::synth::SynthConfig;
use crate::error::{Error, Result};
use crate::masker::Strategy;
use crate::ptw::WeightVector;
use crate::schedule::{ScheduleKind, ScheduleSpec};
use commands::{CheckpointSelector, ExportWhat, Overrides, TrainOptions};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "tvmlm", version, about = "Time-variant masking for masked language model training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic POS-tagged corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        words: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 7)]
        lexicon_seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Learn a vocabulary and pack a tagged corpus into training sequences.
    Prepare {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8192)]
        vocab_size: usize,
        #[arg(long, default_value_t = 128)]
        seq_len: usize,
        /// Reuse this vocabulary instead of learning one.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train a model as described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides schedule.T.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Replace an existing run in the output directory.
        #[arg(long, conflicts_with = "resume")]
        force: bool,
        /// Continue from the last checkpoint of the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many completed steps.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Write run artifacts as CSV.
    Export {
        run: PathBuf,
        #[arg(long, value_enum)]
        what: ExportArg,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a masking-ratio schedule as CSV without training.
    ExportSchedule {
        /// Read the schedule from a run config instead of the flags below.
        #[arg(long, conflicts_with_all = ["kind", "p", "steps", "floor", "peak_scale"])]
        config: Option<PathBuf>,
        #[arg(long, required_unless_present = "config")]
        kind: Option<ScheduleKind>,
        #[arg(long, default_value_t = 0.15)]
        p: f64,
        #[arg(long, default_value_t = 2000)]
        steps: u64,
        #[arg(long)]
        floor: Option<f64>,
        #[arg(long)]
        peak_scale: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Held-out MLM loss of run checkpoints.
    Eval {
        run: PathBuf,
        /// Prepared held-out corpus sharing the run's vocabulary.
        #[arg(long)]
        heldout: PathBuf,
        /// all, last, or a step number.
        #[arg(long, default_value = "all")]
        checkpoint: CheckpointSelector,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print mask plans for the first sequences of a prepared corpus.
    MaskDebug {
        corpus: PathBuf,
        #[arg(long, default_value_t = 0.15)]
        ratio: f64,
        #[arg(long, default_value = "random-token")]
        strategy: Strategy,
        /// Comma-separated per-category weights for ptw.
        #[arg(long)]
        weights: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        limit: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ExportArg {
    Schedule,
    Losses,
    Weights,
    Metrics,
}

impl From<ExportArg> for ExportWhat {
    fn from(a: ExportArg) -> Self {
        match a {
            ExportArg::Schedule => ExportWhat::Schedule,
            ExportArg::Losses => ExportWhat::Losses,
            ExportArg::Weights => ExportWhat::Weights,
            ExportArg::Metrics => ExportWhat::Metrics,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(std::fs::File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_err(e: io::Error) -> Error {
    Error::Other(format!("write failed: {e}"))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Other(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn parse_weights(s: &str) -> Result<WeightVector> {
    let values = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("invalid weight {v:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != crate::corpus::NUM_CATEGORIES || values.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::Config(format!(
            "--weights needs {} positive values",
            crate::corpus::NUM_CATEGORIES
        )));
    }
    Ok(WeightVector(values))
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            words,
            seed,
            lexicon_seed,
            force,
        } => {
            let cfg = SynthConfig {
                min_words: words,
                seed,
                lexicon_seed,
                ..SynthConfig::default()
            };
            let n = commands::cmd_synth(&out, &cfg, force)?;
            log::info!("wrote {n} words to {}", out.display());
        }
        Command::Prepare {
            input,
            out,
            vocab_size,
            seq_len,
            vocab,
            force,
        } => {
            let stats = commands::cmd_prepare(&input, &out, vocab_size, seq_len, vocab.as_deref(), force)?;
            log::info!(
                "{} sequences, {} tokens, vocabulary of {}",
                stats.sequences,
                stats.tokens,
                stats.vocab_size
            );
        }
        Command::Train {
            config,
            seed,
            steps,
            out,
            corpus,
            force,
            resume,
            stop_after,
        } => {
            let overrides = Overrides { seed, steps, out, corpus };
            let summary = commands::cmd_train(&config, &overrides, TrainOptions { force, resume, stop_after })?;
            print_json(&summary)?;
        }
        Command::Export { run, what, out } => {
            commands::cmd_export(&run, what.into(), output(out.as_ref())?)?;
        }
        Command::ExportSchedule {
            config,
            kind,
            p,
            steps,
            floor,
            peak_scale,
            out,
        } => {
            let spec = match config {
                Some(path) => RunConfig::load(&path)?.schedule_spec(),
                None => {
                    let kind = kind.ok_or_else(|| Error::Config("--kind is required".into()))?;
                    let mut spec = ScheduleSpec::new(kind, p, steps)?;
                    if let Some(s) = peak_scale {
                        spec.peak_scale = s;
                    }
                    if let Some(f) = floor {
                        spec = spec.with_floor(f)?;
                    }
                    spec
                }
            };
            commands::write_schedule_csv(&spec, output(out.as_ref())?)?;
        }
        Command::Eval {
            run,
            heldout,
            checkpoint,
            seed,
            format,
            out,
        } => {
            let evals = commands::cmd_eval(&run, checkpoint, &heldout, seed)?;
            let mut w = output(out.as_ref())?;
            match format {
                Format::Json => {
                    serde_json::to_writer_pretty(&mut w, &evals).map_err(|e| Error::Other(e.to_string()))?;
                    writeln!(w).map_err(write_err)?;
                }
                Format::Csv => {
                    writeln!(w, "step,category,loss,masked").map_err(write_err)?;
                    for e in &evals {
                        writeln!(w, "{},ALL,{},{}", e.step, e.report.overall, e.report.masked_tokens)
                            .map_err(write_err)?;
                        for c in crate::corpus::PosCategory::ALL {
                            if let Some(loss) = e.report.category(c) {
                                writeln!(w, "{},{},{loss},{}", e.step, c.name(), e.report.counts[c.id()])
                                    .map_err(write_err)?;
                            }
                        }
                    }
                }
            }
            w.flush().map_err(write_err)?;
        }
        Command::MaskDebug {
            corpus,
            ratio,
            strategy,
            weights,
            seed,
            limit,
        } => {
            let weights = weights.as_deref().map(parse_weights).transpose()?;
            let plans = commands::cmd_mask_debug(&corpus, ratio, strategy, weights, seed, limit)?;
            print_json(&plans)?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
