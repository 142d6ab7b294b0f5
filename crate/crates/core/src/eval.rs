//! Accuracy metrics, backward-pass accounting and CSV report emission.
//!
//! Files written per run under `<out>/<method>/seed_<seed>/`:
//!
//! | file            | columns |
//! |-----------------|---------|
//! | `run.csv`       | method, dataset, seed, task, accuracy, oracle_accuracy, backward_passes |
//! | `drift.csv`     | task, class, method, n_contributing, cos_to_oracle, delta_norm |
//! | `summary.csv`   | method, dataset, T, seed, a_last, a_inc, backward_passes |
//! | `train_log.csv` | task, epoch, lr, train_loss, train_acc |
//! | `config.toml`   | the configuration that produced the run |
//!
//! Empty `oracle_accuracy` / `cos_to_oracle` cells mean "not measured" and
//! "undefined" respectively.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::net::Network;
use crate::proto::{classify_dataset, PrototypeStore};
use crate::train::{head_accuracy, EpochLog};

/// Gradient evaluations spent on drift estimation in one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub task: usize,
    pub old_classes: usize,
    pub passes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BackwardLedger {
    entries: Vec<LedgerEntry>,
}

impl BackwardLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, task: usize, old_classes: usize, passes: usize) {
        self.entries.push(LedgerEntry {
            task,
            old_classes,
            passes,
        });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Passes per task index, `0..num_tasks`.
    pub fn per_task(&self, num_tasks: usize) -> Vec<usize> {
        let mut out = vec![0; num_tasks];
        for e in &self.entries {
            if e.task < num_tasks {
                out[e.task] += e.passes;
            }
        }
        out
    }
}

/// Cumulative drift-estimation backward passes over the whole run.
pub fn count_backward_passes(ledger: &BackwardLedger) -> usize {
    ledger.entries.iter().map(|e| e.passes).sum()
}

/// `Σ_{t=1}^{T-1} (t · classes_per_task) · iterations`: every old class costs
/// one backward pass per attack iteration at every later task.
pub fn expected_backward_passes(
    num_tasks: usize,
    classes_per_task: usize,
    iterations: usize,
) -> usize {
    (1..num_tasks)
        .map(|t| t * classes_per_task * iterations)
        .sum()
}

/// `(a_last, a_inc)`: final accuracy and mean accuracy over all tasks.
pub fn summarize(per_task_accuracy: &[f64]) -> Result<(f64, f64)> {
    let last = *per_task_accuracy
        .last()
        .ok_or_else(|| Error::Evaluation("no per-task accuracies".into()))?;
    let mean = per_task_accuracy.iter().sum::<f64>() / per_task_accuracy.len() as f64;
    Ok((last, mean))
}

fn pool(test_tasks: &[LabeledDataset]) -> Result<LabeledDataset> {
    let parts: Vec<&LabeledDataset> = test_tasks.iter().collect();
    LabeledDataset::concat(&parts)
}

/// NCM accuracy over the pooled test sets of every seen task.
pub fn evaluate_after_task(
    net: &Network,
    store: &PrototypeStore,
    test_tasks: &[LabeledDataset],
) -> Result<f64> {
    let pooled = pool(test_tasks)?;
    if let Some(c) = pooled.class_ids().iter().find(|&&c| store.get(c).is_none()) {
        return Err(Error::Evaluation(format!(
            "no prototype for seen class {c}"
        )));
    }
    classify_dataset(net, store, &pooled)
}

/// Head (softmax argmax) accuracy over the pooled test sets.
pub fn evaluate_head(net: &Network, test_tasks: &[LabeledDataset]) -> Result<f64> {
    head_accuracy(net, &pool(test_tasks)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub task: usize,
    pub class: usize,
    pub method: String,
    pub n_contributing: usize,
    pub cos_to_oracle: Option<f64>,
    pub delta_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunRow {
    method: String,
    dataset: String,
    seed: u64,
    task: usize,
    accuracy: f64,
    oracle_accuracy: Option<f64>,
    backward_passes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub dataset: String,
    #[serde(rename = "T")]
    pub num_tasks: usize,
    pub seed: u64,
    pub a_last: f64,
    pub a_inc: f64,
    pub backward_passes: usize,
}

/// Everything measured in one (method, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub per_task_accuracy: Vec<f64>,
    pub a_last: f64,
    pub a_inc: f64,
    /// NCM accuracy with prototypes recomputed from all retained data; empty
    /// unless oracle evaluation was enabled.
    pub oracle_accuracy: Vec<f64>,
    pub drift_rows: Vec<DriftRow>,
    /// Drift-estimation backward passes per task.
    pub backward_per_task: Vec<usize>,
    pub backward_passes: usize,
    pub train_log: Vec<EpochLog>,
    /// TOML snapshot of the producing configuration.
    pub config: String,
}

impl RunReport {
    pub fn num_tasks(&self) -> usize {
        self.per_task_accuracy.len()
    }

    pub fn summary(&self) -> SummaryRow {
        SummaryRow {
            method: self.method.clone(),
            dataset: self.dataset.clone(),
            num_tasks: self.num_tasks(),
            seed: self.seed,
            a_last: self.a_last,
            a_inc: self.a_inc,
            backward_passes: self.backward_passes,
        }
    }

    /// Mean cosine to the oracle over classes with a defined similarity, per
    /// task, for rows produced by `method`.
    pub fn mean_drift_cosine(&self, method: &str) -> Vec<(usize, Option<f64>)> {
        (1..self.num_tasks())
            .map(|t| {
                let vals: Vec<f64> = self
                    .drift_rows
                    .iter()
                    .filter(|r| r.task == t && r.method == method)
                    .filter_map(|r| r.cos_to_oracle)
                    .collect();
                let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
                (t, mean)
            })
            .collect()
    }

    /// Rebuilds the metric fields from `per_task_accuracy`.
    pub fn check_consistency(&self) -> Result<()> {
        let (last, inc) = summarize(&self.per_task_accuracy)?;
        if last != self.a_last || inc != self.a_inc {
            return Err(Error::Evaluation(
                "stored summary disagrees with per-task accuracy".into(),
            ));
        }
        if self.backward_per_task.iter().sum::<usize>() != self.backward_passes {
            return Err(Error::Evaluation(
                "backward pass total disagrees with per-task counts".into(),
            ));
        }
        Ok(())
    }
}

/// Directory holding one run's files.
pub fn run_dir(out_dir: &Path, method: &str, seed: u64) -> PathBuf {
    out_dir.join(method).join(format!("seed_{seed}"))
}

fn write_rows<T: Serialize>(path: &Path, headers: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(headers)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Writes the run's CSV files and configuration snapshot; returns the directory.
pub fn emit_report(report: &RunReport, out_dir: &Path) -> Result<PathBuf> {
    let dir = run_dir(out_dir, &report.method, report.seed);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let runs: Vec<RunRow> = report
        .per_task_accuracy
        .iter()
        .enumerate()
        .map(|(t, &accuracy)| RunRow {
            method: report.method.clone(),
            dataset: report.dataset.clone(),
            seed: report.seed,
            task: t,
            accuracy,
            oracle_accuracy: report.oracle_accuracy.get(t).copied(),
            backward_passes: report.backward_per_task.get(t).copied().unwrap_or(0),
        })
        .collect();
    write_rows(
        &dir.join("run.csv"),
        &[
            "method",
            "dataset",
            "seed",
            "task",
            "accuracy",
            "oracle_accuracy",
            "backward_passes",
        ],
        &runs,
    )?;
    write_rows(
        &dir.join("drift.csv"),
        &[
            "task",
            "class",
            "method",
            "n_contributing",
            "cos_to_oracle",
            "delta_norm",
        ],
        &report.drift_rows,
    )?;
    write_rows(
        &dir.join("summary.csv"),
        &[
            "method",
            "dataset",
            "T",
            "seed",
            "a_last",
            "a_inc",
            "backward_passes",
        ],
        &[report.summary()],
    )?;
    write_rows(
        &dir.join("train_log.csv"),
        &["task", "epoch", "lr", "train_loss", "train_acc"],
        &report.train_log,
    )?;
    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, &report.config).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(dir)
}

/// Parses a directory written by [`emit_report`].
pub fn read_report(dir: &Path) -> Result<RunReport> {
    let runs: Vec<RunRow> = read_rows(&dir.join("run.csv"))?;
    let summary: Vec<SummaryRow> = read_rows(&dir.join("summary.csv"))?;
    let s = summary
        .into_iter()
        .next()
        .ok_or_else(|| Error::Format("summary.csv holds no row".into()))?;
    let cfg_path = dir.join("config.toml");
    let report = RunReport {
        method: s.method,
        dataset: s.dataset,
        seed: s.seed,
        per_task_accuracy: runs.iter().map(|r| r.accuracy).collect(),
        a_last: s.a_last,
        a_inc: s.a_inc,
        oracle_accuracy: runs.iter().filter_map(|r| r.oracle_accuracy).collect(),
        drift_rows: read_rows(&dir.join("drift.csv"))?,
        backward_per_task: runs.iter().map(|r| r.backward_passes).collect(),
        backward_passes: s.backward_passes,
        train_log: read_rows(&dir.join("train_log.csv"))?,
        config: fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?,
    };
    Ok(report)
}
