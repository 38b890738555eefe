//! Simulated synchronous parameter-server training.
//!
//! Each round every worker copies the global state, runs one local MAMDR
//! epoch on its shard and reports its endpoint; the server replaces the
//! global state with the mean of the endpoints, which equals the global
//! state plus the mean of the worker deltas. Workers only ever read the
//! round's snapshot, so the result does not depend on worker scheduling.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{DomainData, MultiDomainDataset, Split};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::objective::NeuralObjective;
use crate::optim::OptState;
use crate::param::{self, ParamVector};
use crate::rng;
use crate::strategy::{mamdr_epoch, MdrState, TrainConfig};

/// Training rows owned by one worker; every domain id is present, possibly empty.
#[derive(Debug, Clone)]
pub struct WorkerShard {
    pub worker_id: usize,
    pub data: MultiDomainDataset,
    /// Domains for which this worker received no rows.
    pub absent_domains: Vec<usize>,
}

/// Deals each domain's shuffled training rows round-robin over `m` workers.
///
/// Every shard keeps its rows in dataset order, so with `m = 1` the single
/// shard is the training split of `data`.
pub fn partition(data: &MultiDomainDataset, m: usize, seed: u64) -> Result<Vec<WorkerShard>> {
    if m == 0 {
        return Err(Error::InvalidArgument("at least one worker is required".into()));
    }
    let mut assigned: Vec<Vec<Vec<usize>>> = (0..m).map(|_| Vec::with_capacity(data.num_domains())).collect();
    for d in data.domains() {
        let mut rows = d.rows(Split::Train);
        let mut r = rng::for_purpose(seed, rng::purpose::PARTITION ^ ((d.domain_id as u64) << 8));
        rows.shuffle(&mut r);
        let mut per_worker: Vec<Vec<usize>> = (0..m).map(|_| Vec::new()).collect();
        for (pos, row) in rows.into_iter().enumerate() {
            per_worker[pos % m].push(row);
        }
        for (w, mut rows) in per_worker.into_iter().enumerate() {
            rows.sort_unstable();
            assigned[w].push(rows);
        }
    }
    assigned
        .into_iter()
        .enumerate()
        .map(|(worker_id, per_domain)| {
            let mut absent = Vec::new();
            let domains: Vec<DomainData> = data
                .domains()
                .iter()
                .zip(&per_domain)
                .map(|(d, rows)| {
                    if rows.is_empty() {
                        absent.push(d.domain_id);
                    }
                    d.select(rows)
                })
                .collect();
            Ok(WorkerShard {
                worker_id,
                data: MultiDomainDataset::new(domains, data.num_users, data.num_items)?,
                absent_domains: absent,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Mean,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: MdrState,
    pub round: u64,
    pub aggregation: Aggregation,
}

impl ServerState {
    pub fn new(global: MdrState) -> Self {
        Self {
            global,
            round: 0,
            aggregation: Aggregation::Mean,
        }
    }
}

/// Shared and specific parameters of `b - a`, shared first.
#[derive(Debug, Clone)]
pub struct StateDelta {
    pub shared: ParamVector,
    pub specific: Vec<ParamVector>,
}

impl StateDelta {
    pub fn between(from: &MdrState, to: &MdrState) -> Result<Self> {
        if from.num_domains() != to.num_domains() {
            return Err(Error::LayoutMismatch);
        }
        Ok(Self {
            shared: to.shared.sub(&from.shared)?,
            specific: to
                .specific
                .iter()
                .zip(&from.specific)
                .map(|(t, f)| t.sub(f))
                .collect::<Result<_>>()?,
        })
    }

    /// Euclidean norm over all vectors.
    pub fn norm(&self) -> f64 {
        let sq = self.shared.norm() * self.shared.norm()
            + self.specific.iter().map(|v| v.norm() * v.norm()).sum::<f64>();
        crate::math::sqrt(sq)
    }

    /// Every value, shared first.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.shared.values().to_vec();
        for v in &self.specific {
            out.extend_from_slice(v.values());
        }
        out
    }
}

/// Local epoch of one worker from the round's snapshot. Worker `w` draws from
/// the epoch stream `(seed, epoch, w)`, so worker 0 matches single-machine training.
pub fn worker_update(global: &MdrState, shard: &WorkerShard, spec: &ModelSpec, cfg: &TrainConfig) -> Result<MdrState> {
    let wrap = |e: Error| Error::Worker {
        worker: shard.worker_id,
        source: alloc::boxed::Box::new(e),
    };
    let obj = NeuralObjective::new(spec, &shard.data).map_err(wrap)?;
    let mut r = rng::for_epoch(cfg.seed, global.epoch, shard.worker_id as u64);
    mamdr_epoch(global, &obj, cfg, &mut r).map(|(s, _)| s).map_err(wrap)
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub server: ServerState,
    /// Per-worker `local - snapshot`, in worker order.
    pub worker_deltas: Vec<StateDelta>,
    /// New global minus the snapshot.
    pub server_delta: StateDelta,
    pub mean_delta_norm: f64,
}

/// Server reduction of the workers' endpoints (given in worker order).
pub fn aggregate(server: &ServerState, locals: &[MdrState]) -> Result<RoundOutcome> {
    if locals.is_empty() {
        return Err(Error::InvalidArgument("no worker results to aggregate".into()));
    }
    let n = server.global.num_domains();
    for (w, l) in locals.iter().enumerate() {
        if l.num_domains() != n || !l.shared.same_layout(&server.global.shared) {
            return Err(Error::Worker {
                worker: w,
                source: alloc::boxed::Box::new(Error::LayoutMismatch),
            });
        }
    }
    let Aggregation::Mean = server.aggregation;
    let mut global = server.global.clone();
    global.shared = param::mean(&locals.iter().map(|l| &l.shared).collect::<Vec<_>>())?;
    global.shared_opt = OptState::mean(&locals.iter().map(|l| &l.shared_opt).collect::<Vec<_>>())?;
    for i in 0..n {
        global.specific[i] = param::mean(&locals.iter().map(|l| &l.specific[i]).collect::<Vec<_>>())?;
        global.specific_opt[i] = OptState::mean(&locals.iter().map(|l| &l.specific_opt[i]).collect::<Vec<_>>())?;
    }
    global.epoch = server.global.epoch + 1;
    let worker_deltas = locals
        .iter()
        .map(|l| StateDelta::between(&server.global, l))
        .collect::<Result<Vec<_>>>()?;
    let mean_delta_norm = worker_deltas.iter().map(StateDelta::norm).sum::<f64>() / locals.len() as f64;
    let server_delta = StateDelta::between(&server.global, &global)?;
    Ok(RoundOutcome {
        server: ServerState {
            global,
            round: server.round + 1,
            aggregation: server.aggregation,
        },
        worker_deltas,
        server_delta,
        mean_delta_norm,
    })
}

/// One synchronous round with the workers run one after another.
pub fn run_round(server: &ServerState, shards: &[WorkerShard], spec: &ModelSpec, cfg: &TrainConfig) -> Result<RoundOutcome> {
    let locals = shards
        .iter()
        .map(|s| worker_update(&server.global, s, spec, cfg))
        .collect::<Result<Vec<_>>>()?;
    aggregate(server, &locals)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundLog {
    pub round: u64,
    pub worker_count: usize,
    pub mean_delta_norm: f64,
    pub macro_auc: f64,
}

/// `rounds` rounds; `metric` scores the global state after each one.
pub fn run<M>(
    server: &ServerState,
    shards: &[WorkerShard],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    rounds: usize,
    mut metric: M,
) -> Result<(ServerState, Vec<RoundLog>)>
where
    M: FnMut(&MdrState) -> Result<f64>,
{
    let mut current = server.clone();
    let mut log = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let out = run_round(&current, shards, spec, cfg)?;
        log.push(RoundLog {
            round: out.server.round,
            worker_count: shards.len(),
            mean_delta_norm: out.mean_delta_norm,
            macro_auc: metric(&out.server.global)?,
        });
        current = out.server;
    }
    Ok((current, log))
}
