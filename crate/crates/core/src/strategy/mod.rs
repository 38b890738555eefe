//! Multi-domain training procedures.
//!
//! Shared parameters `theta_S` and per-domain additive parameters `theta_i`
//! live in one [`MdrState`]; domain `i` is always served by
//! `combine(theta_S, theta_i)`. Every epoch function takes its inputs by
//! reference and returns fresh values.
//!
//! | strategy         | shared update                         | specific update |
//! |------------------|---------------------------------------|-----------------|
//! | `joint`          | minibatches over the pooled domains   | none            |
//! | `joint-finetune` | as `joint`                            | per-domain finetune after training |
//! | `alternate`      | sequential per-domain pass            | none            |
//! | `dn`             | domain negotiation                    | none            |
//! | `mamdr`          | domain negotiation                    | domain regularization |
//! | `weighted-loss`  | pooled, uncertainty-weighted losses   | none            |
//! | `pcgrad`         | projected per-domain gradients        | none            |
//! | `reptile`        | per-domain inner loops, interpolated  | none            |
//! | `fomaml`         | first-order support/query meta step   | none            |
//! | `mldg`           | meta-train / meta-test split step     | none            |

mod baselines;
mod mamdr;
mod negotiation;
mod regularization;

pub use baselines::{
    finetune, fomaml_epoch, joint_epoch, mldg_epoch, mldg_split, pcgrad_epoch, pcgrad_project, pcgrad_step, project_conflicting,
    reptile_epoch, weighted_log_var_grad, weighted_loss_epoch, weighted_total, LossWeights,
};
pub use mamdr::{mamdr_epoch, mamdr_train};
pub use negotiation::{alternate_epoch, dn_epoch};
pub use regularization::{dr_update, sample_aux_domains};

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::objective::NeuralObjective;
use crate::optim::{AdamHyper, OptState, OptimizerKind};
use crate::param::{combine, ParamVector};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Joint,
    JointFinetune,
    Alternate,
    Dn,
    Mamdr,
    WeightedLoss,
    PcGrad,
    Reptile,
    Fomaml,
    Mldg,
}

impl Strategy {
    pub const ALL: [Strategy; 10] = [
        Strategy::Joint,
        Strategy::JointFinetune,
        Strategy::Alternate,
        Strategy::Dn,
        Strategy::Mamdr,
        Strategy::WeightedLoss,
        Strategy::PcGrad,
        Strategy::Reptile,
        Strategy::Fomaml,
        Strategy::Mldg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Joint => "joint",
            Strategy::JointFinetune => "joint-finetune",
            Strategy::Alternate => "alternate",
            Strategy::Dn => "dn",
            Strategy::Mamdr => "mamdr",
            Strategy::WeightedLoss => "weighted-loss",
            Strategy::PcGrad => "pcgrad",
            Strategy::Reptile => "reptile",
            Strategy::Fomaml => "fomaml",
            Strategy::Mldg => "mldg",
        }
    }

    /// Whether the strategy trains domain-specific parameters.
    pub fn uses_specific(self) -> bool {
        matches!(self, Strategy::Mamdr | Strategy::JointFinetune)
    }
}

impl core::fmt::Display for Strategy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Inner-loop learning rate.
    pub alpha: f64,
    /// Outer-loop interpolation rate of domain negotiation and reptile; outer
    /// SGD rate of fomaml and mldg.
    pub beta: f64,
    /// Interpolation rate of domain regularization.
    pub gamma: f64,
    /// Auxiliary domains sampled per domain-regularization update.
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub inner_steps_per_domain: usize,
    pub seed: u64,
    pub strategy: Strategy,
    /// Update rule of inner loops and pooled baselines.
    pub optimizer: OptimizerKind,
    pub adam: AdamHyper,
    pub finetune_epochs: usize,
    /// Weight of the meta-test term in mldg.
    pub mldg_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 0.1,
            gamma: 0.1,
            k: 5,
            epochs: 10,
            batch_size: 256,
            inner_steps_per_domain: 1,
            seed: 0,
            strategy: Strategy::Mamdr,
            optimizer: OptimizerKind::Sgd,
            adam: AdamHyper::default(),
            finetune_epochs: 1,
            mldg_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad("alpha must be > 0");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta must lie in (0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.inner_steps_per_domain == 0 {
            return bad("inner_steps_per_domain must be >= 1");
        }
        if !(self.mldg_weight >= 0.0) {
            return bad("mldg_weight must be >= 0");
        }
        Ok(())
    }

    /// Validation plus the constraints that depend on the number of domains.
    pub fn validate_for(&self, n_domains: usize) -> Result<()> {
        self.validate()?;
        if self.strategy == Strategy::Mamdr && self.k + 1 > n_domains {
            return Err(Error::InvalidConfig(format!(
                "k = {} needs at least {} domains, got {n_domains}",
                self.k,
                self.k + 1
            )));
        }
        if matches!(self.strategy, Strategy::PcGrad | Strategy::Mldg) && n_domains < 2 {
            return Err(Error::InvalidConfig(format!("{} needs at least two domains", self.strategy)));
        }
        Ok(())
    }

    pub fn inner_optimizer(&self, layout: &alloc::sync::Arc<crate::param::Layout>) -> OptState {
        OptState::new(self.optimizer, layout, self.alpha, self.adam)
    }
}

/// Shared parameters, per-domain additive parameters and their optimizer states.
#[derive(Debug, Clone)]
pub struct MdrState {
    pub shared: ParamVector,
    pub specific: Vec<ParamVector>,
    pub shared_opt: OptState,
    pub specific_opt: Vec<OptState>,
    /// Log-variances of the weighted-loss baseline, one per domain.
    pub loss_weights: LossWeights,
    /// Completed epochs; keys the per-epoch random stream.
    pub epoch: u64,
}

impl MdrState {
    /// Fresh state: specific parameters are zero so every domain starts at `shared`.
    pub fn new(shared: ParamVector, n_domains: usize, cfg: &TrainConfig) -> Self {
        let layout = shared.layout().clone();
        Self {
            specific: (0..n_domains).map(|_| ParamVector::zeros(&layout)).collect(),
            shared_opt: cfg.inner_optimizer(&layout),
            specific_opt: (0..n_domains).map(|_| cfg.inner_optimizer(&layout)).collect(),
            loss_weights: LossWeights::new(n_domains),
            shared,
            epoch: 0,
        }
    }

    pub fn num_domains(&self) -> usize {
        self.specific.len()
    }

    /// Inference parameters of `domain`.
    pub fn domain_params(&self, domain: usize) -> Result<ParamVector> {
        let specific = self.specific.get(domain).ok_or(Error::IndexOutOfRange {
            what: "domain",
            index: domain,
            bound: self.specific.len(),
        })?;
        combine(&self.shared, specific)
    }

    /// Exact equality of every parameter vector and the epoch counter.
    pub fn bit_eq(&self, other: &MdrState) -> bool {
        self.epoch == other.epoch
            && self.shared.bit_eq(&other.shared)
            && self.specific.len() == other.specific.len()
            && self.specific.iter().zip(&other.specific).all(|(a, b)| a.bit_eq(b))
    }
}

/// Result of one epoch or one update.
#[derive(Debug, Clone)]
pub struct Step {
    pub params: ParamVector,
    pub opt: OptState,
    /// Mean minibatch loss seen during the update (NaN when no batch was used).
    pub mean_loss: f64,
}

#[derive(Debug, Default)]
pub(crate) struct LossMeter {
    sum: f64,
    count: usize,
}

impl LossMeter {
    pub(crate) fn push(&mut self, loss: f64) {
        self.sum += loss;
        self.count += 1;
    }

    pub(crate) fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochOutcome {
    pub state: MdrState,
    pub mean_loss: f64,
}

/// One epoch of `cfg.strategy` on the neural objective.
pub fn run_epoch(state: &MdrState, obj: &NeuralObjective<'_>, cfg: &TrainConfig) -> Result<EpochOutcome> {
    use crate::objective::Objective;
    let n = obj.num_domains();
    cfg.validate_for(n)?;
    if state.num_domains() != n {
        return Err(Error::InvalidArgument("state and data disagree on the number of domains".into()));
    }
    let mut r = rng::for_epoch(cfg.seed, state.epoch, 0);
    let mut next = state.clone();
    let mean_loss = match cfg.strategy {
        Strategy::Mamdr => {
            let (s, loss) = mamdr_epoch(state, obj, cfg, &mut r)?;
            next = s;
            loss
        }
        other => {
            let step = match other {
                Strategy::Joint | Strategy::JointFinetune => joint_epoch(&state.shared, &state.shared_opt, obj, cfg, &mut r)?,
                Strategy::Alternate => alternate_epoch(&state.shared, &state.shared_opt, obj, cfg, &mut r)?,
                Strategy::Dn => dn_epoch(&state.shared, &state.shared_opt, obj, cfg, &mut r)?,
                Strategy::WeightedLoss => {
                    let (step, weights) =
                        weighted_loss_epoch(&state.shared, &state.shared_opt, &state.loss_weights, obj, cfg, &mut r)?;
                    next.loss_weights = weights;
                    step
                }
                Strategy::PcGrad => pcgrad_epoch(&state.shared, &state.shared_opt, obj, cfg, &mut r)?,
                Strategy::Reptile => reptile_epoch(&state.shared, &state.shared_opt, obj, cfg, &mut r)?,
                Strategy::Fomaml => fomaml_epoch(&state.shared, obj, cfg, &mut r)?,
                Strategy::Mldg => mldg_epoch(&state.shared, obj, cfg, &mut r)?,
                Strategy::Mamdr => unreachable!(),
            };
            next.shared = step.params;
            next.shared_opt = step.opt;
            next.epoch += 1;
            step.mean_loss
        }
    };
    Ok(EpochOutcome { state: next, mean_loss })
}

/// Work that happens once after the last epoch (per-domain finetuning).
pub fn finalize(state: &MdrState, obj: &NeuralObjective<'_>, cfg: &TrainConfig) -> Result<MdrState> {
    let mut next = state.clone();
    if cfg.strategy == Strategy::JointFinetune {
        let mut r = rng::for_epoch(cfg.seed, state.epoch, u64::MAX);
        let tuned = finetune(&state.shared, obj, cfg, cfg.finetune_epochs, &mut r)?;
        for (spec, model) in next.specific.iter_mut().zip(&tuned) {
            *spec = model.sub(&state.shared)?;
        }
    }
    Ok(next)
}

/// Runs `cfg.epochs` epochs then [`finalize`]; `on_epoch` sees every intermediate state.
pub fn train<F>(state: &MdrState, obj: &NeuralObjective<'_>, cfg: &TrainConfig, mut on_epoch: F) -> Result<MdrState>
where
    F: FnMut(&MdrState, f64) -> Result<()>,
{
    let mut current = state.clone();
    for _ in 0..cfg.epochs {
        let out = run_epoch(&current, obj, cfg)?;
        on_epoch(&out.state, out.mean_loss)?;
        current = out.state;
    }
    finalize(&current, obj, cfg)
}
