//! Tab-separated report files and the saved-run artifact.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes. No file carries a timestamp.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::networks::{Checkpoint, ModelParams};

use super::config::TrainConfig;
use super::evaluate::EvalReport;
use super::experiments::{AblationRow, GradientCheckRow, LearningRateRow, NoiseRow};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        self.rows.push(row.into_iter().map(Into::into).collect());
    }

    pub fn to_tsv(&self) -> String {
        let mut s = self.header.join("\t");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join("\t"));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), num)
}

pub fn train_log_table(log: &[LossBreakdown]) -> Table {
    let mut t = Table::new(LossBreakdown::HEADER);
    for b in log {
        t.push(std::iter::once(b.epoch.to_string()).chain(b.values().iter().map(|&x| num(x))));
    }
    t
}

pub fn metrics_table(report: &EvalReport) -> Table {
    let mut t = Table::new(["metric", "value"]);
    t.push(["accuracy".to_string(), num(report.accuracy)]);
    t.push(["clean_accuracy".to_string(), opt(report.clean_accuracy)]);
    t.push([
        "corrupted_accuracy".to_string(),
        opt(report.corrupted_accuracy),
    ]);
    t.push(["instances".to_string(), report.labels.len().to_string()]);
    t.push([
        "corrupted_instances".to_string(),
        report.corrupted.iter().filter(|&&c| c).count().to_string(),
    ]);
    t.push([
        "mean_joint_uncertainty".to_string(),
        num(report.mean_joint_uncertainty()),
    ]);
    t
}

pub fn histogram_table(report: &EvalReport) -> Table {
    let h = &report.histograms;
    let mut t = Table::new([
        "bin_lo",
        "bin_hi",
        "overall_clean",
        "overall_corrupted",
        "local_clean",
        "local_corrupted",
    ]);
    for b in 0..h.overall_clean.len() {
        t.push([
            num(h.edges[b]),
            num(h.edges[b + 1]),
            num(h.overall_clean[b]),
            num(h.overall_corrupted[b]),
            num(h.local_clean[b]),
            num(h.local_corrupted[b]),
        ]);
    }
    t
}

pub fn conflict_table(report: &EvalReport, names: &[String]) -> Table {
    let mut t = Table::new(std::iter::once("view".to_string()).chain(names.iter().cloned()));
    for (name, row) in names.iter().zip(&report.conflict_matrix) {
        t.push(std::iter::once(name.clone()).chain(row.iter().map(|&x| num(x))));
    }
    t
}

pub fn predictions_table(report: &EvalReport) -> Table {
    let v = report.views();
    let mut t = Table::new(
        ["instance", "label", "prediction", "corrupted", "joint_u"]
            .into_iter()
            .map(String::from)
            .chain((0..v).map(|i| format!("local_u_{i}"))),
    );
    for i in 0..report.labels.len() {
        t.push(
            [
                i.to_string(),
                report.labels[i].to_string(),
                report.predictions[i].to_string(),
                u8::from(report.corrupted[i]).to_string(),
                num(report.joint_uncertainty[i]),
            ]
            .into_iter()
            .chain(report.local_uncertainty[i].iter().map(|&u| num(u))),
        );
    }
    t
}

pub fn noise_table(rows: &[NoiseRow]) -> Table {
    let mut t = Table::new(["sigma", "accuracy", "mean_uncertainty"]);
    for r in rows {
        t.push([num(r.sigma), num(r.accuracy), num(r.mean_uncertainty)]);
    }
    t
}

pub fn learning_rate_table(rows: &[LearningRateRow]) -> Table {
    let mut t = Table::new(["learning_rate", "mean_accuracy", "std_accuracy"]);
    for r in rows {
        t.push([
            num(r.learning_rate),
            num(r.mean_accuracy),
            num(r.std_accuracy),
        ]);
    }
    t
}

pub fn ablation_table(rows: &[AblationRow]) -> Table {
    let mut t = Table::new([
        "variant",
        "accuracy",
        "delta",
        "final_loss",
        "loss_delta",
        "loss_eta",
    ]);
    for r in rows {
        t.push([
            r.variant.to_string(),
            num(r.accuracy),
            num(r.delta),
            num(r.final_loss),
            num(r.loss_delta),
            num(r.loss_eta),
        ]);
    }
    t
}

pub fn gradcheck_table(rows: &[GradientCheckRow], tolerance: f64) -> Table {
    let mut t = Table::new(["loss", "max_rel_error", "seeds", "pass"]);
    for r in rows {
        t.push([
            r.name.to_string(),
            format!("{:.3e}", r.max_rel_error),
            r.seeds.to_string(),
            (r.max_rel_error < tolerance).to_string(),
        ]);
    }
    t
}

/// `run.meta`: key-value pairs identifying a run.
pub fn write_run_meta(
    dir: &Path,
    command: &str,
    cfg: &TrainConfig,
    extra: &[(&str, String)],
) -> Result<()> {
    let mut t = Table::new(["key", "value"]);
    t.push(["command".to_string(), command.to_string()]);
    t.push(["seed".to_string(), cfg.seed.to_string()]);
    t.push(["config_hash".to_string(), cfg.hash()?]);
    t.push([
        "trustmv_version".to_string(),
        env!("CARGO_PKG_VERSION").to_string(),
    ]);
    for (k, v) in extra {
        t.push([k.to_string(), v.clone()]);
    }
    t.write(&dir.join("run.meta"))
}

/// Write the evaluation files into `dir`.
pub fn write_eval_reports(dir: &Path, report: &EvalReport, names: &[String]) -> Result<()> {
    metrics_table(report).write(&dir.join("metrics.tsv"))?;
    histogram_table(report).write(&dir.join("uncertainty_hist.tsv"))?;
    conflict_table(report, names).write(&dir.join("conflict_matrix.tsv"))?;
    predictions_table(report).write(&dir.join("predictions.tsv"))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub const RUN_FORMAT: &str = "trustmv-run";

/// Everything needed to evaluate a trained model on new data: the
/// checkpoint, the config it was trained with, the train-set feature
/// statistics, and how the held-out split was drawn.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunArtifact {
    pub format: String,
    pub config: TrainConfig,
    pub standardizer: Standardizer,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub checkpoint: Checkpoint,
}

impl RunArtifact {
    pub fn new(
        model: &ModelParams,
        config: TrainConfig,
        standardizer: Standardizer,
        train_fraction: f64,
        split_seed: u64,
    ) -> Self {
        Self {
            format: RUN_FORMAT.to_string(),
            config,
            standardizer,
            train_fraction,
            split_seed,
            checkpoint: Checkpoint::from_model(model),
        }
    }

    pub fn model(&self) -> Result<ModelParams> {
        self.checkpoint.clone().into_model()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let run: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        if run.format != RUN_FORMAT {
            return Err(Error::Serde(format!(
                "{}: not a {RUN_FORMAT} file",
                path.display()
            )));
        }
        Ok(run)
    }

    pub fn default_path(dir: &Path) -> PathBuf {
        dir.join("model.json")
    }
}
