//! Runs behind the CLI commands, usable without touching the filesystem.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use mdopt_core::data::{split, MultiDomainDataset, Split};
use mdopt_core::diagnostics::{
    conflict_on, dn_taylor_residual, dr_identity_check, innergrad_expectation_check, probe_batches,
    track_inner_products, EpochConflict, FixedBatchLoss, QuadDomain,
};
use mdopt_core::eval::{evaluate, MetricReport};
use mdopt_core::model::{init_params, ModelSpec};
use mdopt_core::objective::NeuralObjective;
use mdopt_core::param::{Layout, ParamVector};
use mdopt_core::ps::{self, RoundLog, ServerState};
use mdopt_core::rng;
use mdopt_core::strategy::{self, MdrState, TrainConfig};
use mdopt_core::synth::generate;

use crate::config::{DataSource, ExperimentConfig};
use crate::dataset::load_dataset;
use crate::error::{Error, Result};
use crate::report::{self, EpochLog, SweepRow, TaylorPoint};

/// The configured dataset with its split tags.
pub fn load_data(cfg: &ExperimentConfig) -> Result<MultiDomainDataset> {
    match &cfg.data {
        DataSource::File(path) => load_dataset(path),
        DataSource::Synthetic(spec) => Ok(split(&generate(spec)?, cfg.split, cfg.split_seed)?),
    }
}

/// Model sized to `data`, initialised from `seed`.
pub fn model_for(cfg: &ExperimentConfig, data: &MultiDomainDataset, seed: u64) -> ModelSpec {
    cfg.model_spec(data.num_users, data.num_items, seed)
}

pub fn initial_state(spec: &ModelSpec, data: &MultiDomainDataset, train: &TrainConfig) -> Result<MdrState> {
    Ok(MdrState::new(init_params(spec, spec.seed)?, data.num_domains(), train))
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub spec: ModelSpec,
    pub state: MdrState,
    pub epochs: Vec<EpochLog>,
    pub test: MetricReport,
}

/// Trains one seed, logging validation macro-AUC after every epoch.
pub fn train_run(cfg: &ExperimentConfig, data: &MultiDomainDataset, seed: u64) -> Result<RunResult> {
    let train = cfg.train_for_seed(seed);
    let spec = model_for(cfg, data, seed);
    let obj = NeuralObjective::new(&spec, data)?;
    let init = initial_state(&spec, data, &train)?;
    let mut epochs = Vec::with_capacity(train.epochs);
    let state = strategy::train(&init, &obj, &train, |s, loss| {
        let val = evaluate(&spec, s, data, Split::Val)?;
        epochs.push(EpochLog {
            epoch: s.epoch,
            train_loss: loss,
            val_macro_auc: val.macro_auc,
        });
        Ok(())
    })?;
    let test = evaluate(&spec, &state, data, Split::Test)?;
    Ok(RunResult {
        seed,
        spec,
        state,
        epochs,
        test,
    })
}

/// Every configured seed, in parallel; results keep seed order.
pub fn train_seeds(cfg: &ExperimentConfig, data: &MultiDomainDataset) -> Result<Vec<RunResult>> {
    cfg.seeds.par_iter().map(|&s| train_run(cfg, data, s)).collect()
}

/// Hyperparameters of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k: usize,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!("alpha={}_beta={}_gamma={}_k={}", self.alpha, self.beta, self.gamma, self.k)
    }
}

/// Cartesian product of the grid; empty axes keep the configured value.
pub fn sweep_cells(cfg: &ExperimentConfig) -> Result<Vec<Cell>> {
    let g = &cfg.sweep;
    if g.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
    let t = &cfg.train;
    let ks = if g.k.is_empty() { vec![t.k] } else { g.k.clone() };
    let mut cells = Vec::new();
    for &alpha in &or(&g.alpha, t.alpha) {
        for &beta in &or(&g.beta, t.beta) {
            for &gamma in &or(&g.gamma, t.gamma) {
                for &k in &ks {
                    cells.push(Cell { alpha, beta, gamma, k });
                }
            }
        }
    }
    Ok(cells)
}

/// One run per cell per seed. With `out`, each run writes its metrics and
/// resolved config into its own subdirectory.
pub fn run_sweep(cfg: &ExperimentConfig, data: &MultiDomainDataset, out: Option<&Path>) -> Result<Vec<SweepRow>> {
    let cells = sweep_cells(cfg)?;
    let jobs: Vec<(Cell, u64)> = cells
        .iter()
        .flat_map(|&c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    jobs.par_iter()
        .map(|&(cell, seed)| {
            let mut c = cfg.clone();
            c.train.alpha = cell.alpha;
            c.train.beta = cell.beta;
            c.train.gamma = cell.gamma;
            c.train.k = cell.k;
            c.seeds = vec![seed];
            c.train.seed = seed;
            c.validate()?;
            let run = train_run(&c, data, seed)?;
            if let Some(root) = out {
                let dir = root.join("cells").join(cell.dir_name()).join(format!("seed-{seed}"));
                fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
                fs::write(dir.join("resolved.conf"), c.to_text()).map_err(Error::io(&dir))?;
                report::write_metrics(&run.test, &dir.join("test_metrics.csv"))?;
                report::write_json(&report::MetricSummary::from(&run.test), &dir.join("summary.json"))?;
            }
            Ok(SweepRow {
                alpha: cell.alpha,
                beta: cell.beta,
                gamma: cell.gamma,
                k: cell.k,
                seed,
                macro_auc: run.test.macro_auc,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PsResult {
    pub spec: ModelSpec,
    pub server: ServerState,
    pub log: Vec<RoundLog>,
    pub test: MetricReport,
}

/// `rounds` synchronous rounds over `m` workers; the log scores validation data.
pub fn pssim_run(
    cfg: &ExperimentConfig,
    data: &MultiDomainDataset,
    seed: u64,
    m: usize,
    rounds: usize,
) -> Result<PsResult> {
    let train = cfg.train_for_seed(seed);
    let spec = model_for(cfg, data, seed);
    let shards = ps::partition(data, m, seed)?;
    let server = ServerState::new(initial_state(&spec, data, &train)?);
    let (server, log) = ps::run(&server, &shards, &spec, &train, rounds, |s| {
        Ok(evaluate(&spec, s, data, Split::Val)?.macro_auc)
    })?;
    let test = evaluate(&spec, &server.global, data, Split::Test)?;
    Ok(PsResult {
        spec,
        server,
        log,
        test,
    })
}

/// Second-order DN prediction residuals of the neural model at `params`.
pub fn neural_taylor(
    spec: &ModelSpec,
    obj: &NeuralObjective<'_>,
    params: &ParamVector,
    probe_batch_size: usize,
    seed: u64,
    alphas: &[f64],
) -> Result<Vec<TaylorPoint>> {
    let probes = probe_batches(obj, probe_batch_size, seed)?;
    let losses: Vec<FixedBatchLoss<'_>> = probes
        .into_iter()
        .map(|b| FixedBatchLoss {
            spec,
            batch: b.batch,
            eps: 1e-5,
        })
        .collect();
    alphas
        .iter()
        .map(|&alpha| {
            let r = dn_taylor_residual(&losses, params, alpha)?;
            Ok(TaylorPoint {
                alpha,
                residual: r.residual,
            })
        })
        .collect()
}

/// Gradient geometry of the shared parameters: at a given state, or over a
/// fresh training run (initialisation included as the first point).
pub fn conflict_series(
    cfg: &ExperimentConfig,
    data: &MultiDomainDataset,
    spec: &ModelSpec,
    from: Option<&MdrState>,
    seed: u64,
) -> Result<(MdrState, Vec<EpochConflict>)> {
    let train = cfg.train_for_seed(seed);
    let obj = NeuralObjective::new(spec, data)?;
    let probes = probe_batches(&obj, cfg.probe_batch_size, seed)?;
    let start = match from {
        Some(s) => s.clone(),
        None => initial_state(spec, data, &train)?,
    };
    let first = EpochConflict {
        epoch: start.epoch,
        report: conflict_on(&obj, &start.shared, &probes)?,
    };
    if from.is_some() {
        return Ok((start, vec![first]));
    }
    let (end, rest) = track_inner_products(&start, &obj, &train, cfg.probe_batch_size)?;
    Ok((end, std::iter::once(first).chain(rest).collect()))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SelfCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Quadratic-domain oracles of the DN expansion, the order-averaged cross
/// term and the DR update.
pub fn quadratic_self_test(seed: u64) -> Result<Vec<SelfCheck>> {
    const DIM: usize = 8;
    const TOL: f64 = 1e-10;
    let mut r = rng::for_purpose(seed, rng::purpose::PROBE);
    let a = QuadDomain::random(DIM, 0.5, 2.0, &mut r)?;
    let b = QuadDomain::random(DIM, 0.5, 2.0, &mut r)?;
    let layout = Layout::flat(DIM);
    let theta0 = ParamVector::from_values(&layout, (0..DIM).map(|i| 0.3 * i as f64 - 1.0).collect())?;
    let mut checks = Vec::new();
    let mut push = |name: String, value: f64| {
        checks.push(SelfCheck {
            name,
            value,
            tolerance: TOL,
            pass: value <= TOL,
        })
    };
    for alpha in [1e-2, 1e-3] {
        let rep = dn_taylor_residual(&[a.clone(), b.clone()], &theta0, alpha)?;
        push(format!("dn_taylor_n2_alpha{alpha}"), rep.residual);
        push(format!("dr_identity_alpha{alpha}"), dr_identity_check(&a, &b, &theta0, alpha)?.residual);
    }
    push("innergrad_expectation".into(), innergrad_expectation_check(&a, &b, &theta0)?);
    Ok(checks)
}

/// Creates `dir` and returns it.
pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    Ok(dir.to_path_buf())
}
