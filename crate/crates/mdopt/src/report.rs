//! CSV tables and JSON summaries written by the experiment commands.

use std::fs;
use std::path::Path;

use mdopt_core::diagnostics::{EpochConflict, GradientReport};
use mdopt_core::eval::MetricReport;
use mdopt_core::ps::RoundLog;
use serde::Serialize;

use crate::error::{Error, Result};

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(Error::io(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(Error::io(path))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// `domain_id,n_pos,n_neg,auc,loss`; the AUC is blank for single-class domains.
pub fn write_metrics(report: &MetricReport, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["domain_id", "n_pos", "n_neg", "auc", "loss"])?;
    for d in &report.domains {
        w.write_record([
            d.domain_id.to_string(),
            d.n_pos.to_string(),
            d.n_neg.to_string(),
            fmt_opt(d.auc),
            d.loss.to_string(),
        ])?;
    }
    finish(w, path)
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricSummary {
    pub split: String,
    pub macro_auc: f64,
    pub per_domain_auc: Vec<Option<f64>>,
    pub skipped_domains: Vec<usize>,
}

impl From<&MetricReport> for MetricSummary {
    fn from(r: &MetricReport) -> Self {
        Self {
            split: r.split.as_str().to_string(),
            macro_auc: r.macro_auc,
            per_domain_auc: r.domains.iter().map(|d| d.auc).collect(),
            skipped_domains: r.skipped.clone(),
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(Error::io(path))
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: u64,
    pub train_loss: f64,
    pub val_macro_auc: f64,
}

/// `epoch,train_loss,val_macro_auc`.
pub fn write_epochs(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "train_loss", "val_macro_auc"])?;
    for e in log {
        w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.val_macro_auc.to_string()])?;
    }
    finish(w, path)
}

/// `epoch,pair_i,pair_j,inner,cosine`, pairs `i < j`.
pub fn write_conflicts(series: &[EpochConflict], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "pair_i", "pair_j", "inner", "cosine"])?;
    for e in series {
        for (i, j, inner, cosine) in e.report.pairs() {
            w.write_record([
                e.epoch.to_string(),
                i.to_string(),
                j.to_string(),
                inner.to_string(),
                cosine.to_string(),
            ])?;
        }
    }
    finish(w, path)
}

/// `epoch,mean_cosine,conflict_rate`.
pub fn write_cosine_series(series: &[EpochConflict], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "mean_cosine", "conflict_rate"])?;
    for e in series {
        w.write_record([
            e.epoch.to_string(),
            e.report.mean_cosine().to_string(),
            e.report.conflict_rate.to_string(),
        ])?;
    }
    finish(w, path)
}

#[derive(Debug, Clone, Serialize)]
pub struct TaylorPoint {
    pub alpha: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseSummary {
    pub epoch: u64,
    pub conflict_rate: f64,
    pub mean_cosine: f64,
    pub taylor_residual: Vec<TaylorPoint>,
}

impl DiagnoseSummary {
    pub fn new(epoch: u64, report: &GradientReport, taylor_residual: Vec<TaylorPoint>) -> Self {
        Self {
            epoch,
            conflict_rate: report.conflict_rate,
            mean_cosine: report.mean_cosine(),
            taylor_residual,
        }
    }
}

/// One cell of a hyperparameter sweep for one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k: usize,
    pub seed: u64,
    pub macro_auc: f64,
}

/// `alpha,beta,gamma,k,seed,macro_auc`.
pub fn write_sweep(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["alpha", "beta", "gamma", "k", "seed", "macro_auc"])?;
    }
    finish(w, path)
}

/// `round,worker_count,mean_delta_norm,macro_auc`.
pub fn write_rounds(log: &[RoundLog], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["round", "worker_count", "mean_delta_norm", "macro_auc"])?;
    for r in log {
        w.write_record([
            r.round.to_string(),
            r.worker_count.to_string(),
            r.mean_delta_norm.to_string(),
            r.macro_auc.to_string(),
        ])?;
    }
    finish(w, path)
}
