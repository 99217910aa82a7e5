//! Machine-readable run outputs: JSON documents, CSV tables, and the
//! append-only JSON-lines logs.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use chemtext_core::data::Splits;
use chemtext_core::explain::{Attribution, ExplainerHistory};
use chemtext_core::hpo::{Trial, TrialStatus};
use chemtext_core::train::TrainHistory;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for r in rows {
        writeln!(w, "{r}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Split indices plus enough context to audit them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub dataset: String,
    pub n_records: usize,
    /// Rows left after collapsing duplicate SMILES.
    pub n_unique: usize,
    #[serde(flatten)]
    pub splits: Splits,
}

pub fn write_history_csv(path: &Path, h: &TrainHistory) -> Result<()> {
    let rows = h
        .epochs
        .iter()
        .map(|e| format!("{},{},{},{}", e.epoch, e.train_loss, e.val_loss, opt(e.val_metric)));
    write_csv(path, "epoch,train_loss,val_loss,val_metric", rows)
}

pub fn write_explainer_history_csv(path: &Path, h: &ExplainerHistory) -> Result<()> {
    let rows = h
        .epochs
        .iter()
        .map(|e| format!("{},{},{},{},{},{}", e.epoch, e.learning_rate, e.fidelity, e.l2, e.entropy, e.total));
    write_csv(path, "epoch,learning_rate,fidelity,l2,entropy,total", rows)
}

/// One row per completed trial with a test metric.
pub fn write_scatter_csv(path: &Path, trials: &[Trial]) -> Result<usize> {
    let rows: Vec<String> = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Completed)
        .filter_map(|t| Some(format!("{},{},{}", t.id, t.objective?, t.test_metric?)))
        .collect();
    let n = rows.len();
    write_csv(path, "trial,validation,test", rows)?;
    Ok(n)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut w = create(path)?;
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_attributions(path: &Path, molecules: &[Attribution]) -> Result<()> {
    write_jsonl(path, molecules)
}

/// Append-only trial log. Each line is flushed as soon as the trial ends, so
/// an interrupted search loses at most the trial in flight.
pub struct TrialLedger {
    path: std::path::PathBuf,
}

impl TrialLedger {
    pub fn new(path: impl Into<std::path::PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Trials recorded so far, empty when the file does not exist. A final
    /// line without its newline is a write cut short and is ignored.
    pub fn read(&self) -> Result<Vec<Trial>> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        if complete.len() < text.len() {
            log::warn!("{}: ignoring a partial final line", self.path.display());
        }
        let mut trials = Vec::new();
        for line in complete.lines().filter(|l| !l.trim().is_empty()) {
            let t: Trial = serde_json::from_str(line).map_err(|e| Error::json(&self.path, e))?;
            if t.id != trials.len() {
                return Err(Error::Config(format!(
                    "{}: trial ids must run 0, 1, 2, ... but found {} at position {}",
                    self.path.display(),
                    t.id,
                    trials.len()
                )));
            }
            trials.push(t);
        }
        if complete.len() < text.len() {
            // drop the torn tail so appends start on a fresh line
            fs::write(&self.path, complete).map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(trials)
    }

    pub fn append(&self, trial: &Trial) -> Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let mut line = serde_json::to_string(trial).map_err(|e| Error::json(&self.path, e))?;
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        f.sync_data().map_err(|e| Error::io(&self.path, e))
    }
}
