//! Run directory layout, locking and the on-disk metrics sink.
//!
//! ```text
//! <run>/config.txt         resolved configuration
//! <run>/stats.json         copy of the prepared corpus statistics
//! <run>/metrics.jsonl      one row per step
//! <run>/tracker.jsonl      one row per category per tracker snapshot
//! <run>/checkpoints/step-NNNNNNNN.ckpt
//! <run>/run.lock           pid of the process owning the directory
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ptw::TrackerSnapshot;
use crate::trainer::{tracker_rows, Checkpoint, MetricsSink, StepMetrics, TrackerRow, Trainer};

pub const CONFIG_FILE: &str = "config.txt";
pub const STATS_FILE: &str = "stats.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TRACKER_FILE: &str = "tracker.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LOCK_FILE: &str = "run.lock";

#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn checkpoint_path(&self, step: u64) -> PathBuf {
        self.root.join(CHECKPOINT_DIR).join(format!("step-{step:08}.ckpt"))
    }

    /// True when any run artifact is present.
    pub fn has_run(&self) -> bool {
        [CONFIG_FILE, METRICS_FILE, TRACKER_FILE, CHECKPOINT_DIR]
            .iter()
            .any(|n| self.path(n).exists())
    }

    /// Removes the artifacts of a previous run, leaving other files alone.
    pub fn clear(&self) -> Result<()> {
        for name in [CONFIG_FILE, STATS_FILE, METRICS_FILE, TRACKER_FILE] {
            let p = self.path(name);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        let dir = self.path(CHECKPOINT_DIR);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }

    /// Deletes the metrics and tracker streams.
    pub fn reset_streams(&self) -> Result<()> {
        for name in [METRICS_FILE, TRACKER_FILE] {
            let p = self.path(name);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        Ok(())
    }

    /// Checkpoint steps present, ascending.
    pub fn checkpoints(&self) -> Result<Vec<u64>> {
        let dir = self.path(CHECKPOINT_DIR);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut steps = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let name = entry.map_err(|e| Error::io(&dir, e))?.file_name();
            let name = name.to_string_lossy();
            if let Some(step) = name
                .strip_prefix("step-")
                .and_then(|s| s.strip_suffix(".ckpt"))
                .and_then(|s| s.parse().ok())
            {
                steps.push(step);
            }
        }
        steps.sort_unstable();
        Ok(steps)
    }

    pub fn lock(&self) -> Result<RunLock> {
        RunLock::acquire(&self.path(LOCK_FILE))
    }
}

fn process_alive(pid: u32) -> bool {
    Path::new(&format!("/proc/{pid}")).exists()
}

/// Exclusive ownership of a run directory; released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(path: &Path) -> Result<Self> {
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id()).map_err(|e| Error::io(path, e))?;
                    return Ok(Self { path: path.to_owned() });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let owner = fs::read_to_string(path).ok().and_then(|s| s.trim().parse::<u32>().ok());
                    match owner {
                        Some(pid) if process_alive(pid) => {
                            return Err(Error::Locked(path.parent().unwrap_or(path).to_owned()))
                        }
                        _ => {
                            log::warn!("removing stale lock {}", path.display());
                            fs::remove_file(path).map_err(|e| Error::io(path, e))?;
                        }
                    }
                }
                Err(e) => return Err(Error::io(path, e)),
            }
        }
        Err(Error::Locked(path.parent().unwrap_or(path).to_owned()))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Reads a JSON-lines file.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| Error::Other(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(row);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| Error::Other(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Drops metrics rows past a checkpoint so a resumed run appends without
/// gaps or duplicates. Step rows with `step >= resume_step` and tracker rows
/// with `step > resume_step` belong to the lost tail.
pub fn truncate_streams(dir: &RunDir, resume_step: u64) -> Result<()> {
    let metrics = dir.path(METRICS_FILE);
    if metrics.exists() {
        let rows: Vec<StepMetrics> = read_jsonl(&metrics)?;
        let kept: Vec<_> = rows.into_iter().filter(|r| r.step < resume_step).collect();
        write_jsonl(&metrics, &kept)?;
    }
    let tracker = dir.path(TRACKER_FILE);
    if tracker.exists() {
        let rows: Vec<TrackerRow> = read_jsonl(&tracker)?;
        let kept: Vec<_> = rows.into_iter().filter(|r| r.step <= resume_step).collect();
        write_jsonl(&tracker, &kept)?;
    }
    Ok(())
}

/// Appends the metrics stream to the run directory and writes checkpoints.
pub struct FileSink {
    dir: RunDir,
    metrics: BufWriter<File>,
    tracker: BufWriter<File>,
}

fn append(path: &Path) -> Result<BufWriter<File>> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

impl FileSink {
    pub fn open(dir: &RunDir) -> Result<Self> {
        let ck = dir.path(CHECKPOINT_DIR);
        fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
        Ok(Self {
            metrics: append(&dir.path(METRICS_FILE))?,
            tracker: append(&dir.path(TRACKER_FILE))?,
            dir: dir.clone(),
        })
    }

    pub fn flush(&mut self) -> Result<()> {
        self.metrics.flush().map_err(|e| Error::io(self.dir.path(METRICS_FILE), e))?;
        self.tracker.flush().map_err(|e| Error::io(self.dir.path(TRACKER_FILE), e))
    }
}

fn write_row<T: Serialize>(w: &mut BufWriter<File>, row: &T, path: PathBuf) -> Result<()> {
    serde_json::to_writer(&mut *w, row).map_err(|e| Error::Other(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

impl MetricsSink for FileSink {
    fn on_step(&mut self, row: &StepMetrics) -> Result<()> {
        write_row(&mut self.metrics, row, self.dir.path(METRICS_FILE))
    }

    fn on_snapshot(&mut self, snapshot: &TrackerSnapshot) -> Result<()> {
        for row in tracker_rows(snapshot) {
            write_row(&mut self.tracker, &row, self.dir.path(TRACKER_FILE))?;
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, trainer: &Trainer<'_>) -> Result<()> {
        // streams first, so a checkpoint never refers to rows not on disk
        self.flush()?;
        let step = trainer.state.step;
        Checkpoint::from_trainer(trainer).save(&self.dir.checkpoint_path(step))?;
        log::info!("checkpoint at step {step}");
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::new(tmp.path());
        let lock = dir.lock().unwrap();
        assert!(matches!(dir.lock(), Err(Error::Locked(_))));
        drop(lock);
        assert!(dir.lock().is_ok());
    }

    #[test]
    fn stale_lock_is_replaced() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::new(tmp.path());
        // pid far above any default pid_max
        fs::write(dir.path(LOCK_FILE), "4294967290\n").unwrap();
        assert!(dir.lock().is_ok());
    }

    #[test]
    fn checkpoint_listing() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::new(tmp.path());
        assert!(dir.checkpoints().unwrap().is_empty());
        fs::create_dir_all(dir.path(CHECKPOINT_DIR)).unwrap();
        for s in [20, 3, 100] {
            fs::write(dir.checkpoint_path(s), b"").unwrap();
        }
        fs::write(dir.path(CHECKPOINT_DIR).join("notes.txt"), b"").unwrap();
        assert_eq!(dir.checkpoints().unwrap(), vec![3, 20, 100]);
    }
}
