//! Comparison methods: pooled training, finetuning, uncertainty-weighted
//! losses, gradient surgery and first-order meta-learning.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::RngCore;

use super::negotiation::visit;
use super::{LossMeter, Step, TrainConfig};
use crate::error::{Error, Result};
use crate::math;
use crate::model;
use crate::objective::{NeuralObjective, Objective, PooledObjective};
use crate::optim::{outer_step, OptState};
use crate::param::{self, ParamVector};

fn checked<O: Objective>(obj: &O, params: &ParamVector, batch: &O::Batch, domain: usize) -> Result<(f64, ParamVector)> {
    let (loss, grad) = obj.loss_grad(params, batch).map_err(|e| e.in_domain(domain))?;
    if !loss.is_finite() {
        return Err(Error::Divergence { domain });
    }
    Ok((loss, grad))
}

fn present<O: Objective>(obj: &O) -> Vec<usize> {
    (0..obj.num_domains()).filter(|&d| obj.train_rows(d) > 0).collect()
}

/// One pass of minibatch training over the pooled training rows of every domain.
pub fn joint_epoch<O: PooledObjective>(
    shared: &ParamVector,
    opt: &OptState,
    obj: &O,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<Step> {
    let batches = obj.pooled_epoch(cfg.batch_size, rng)?;
    let mut theta = shared.clone();
    let mut opt = opt.clone();
    let mut meter = LossMeter::default();
    for b in &batches {
        let (loss, grad) = obj.loss_grad(&theta, b)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("pooled loss"));
        }
        meter.push(loss);
        opt.apply(&mut theta, &grad)?;
    }
    Ok(Step {
        params: theta,
        opt,
        mean_loss: meter.mean(),
    })
}

/// Per-domain copies of `shared`, each trained for `epochs` passes over its own domain
/// with a fresh optimizer state. Domains without training rows keep `shared`.
pub fn finetune<O: PooledObjective>(
    shared: &ParamVector,
    obj: &O,
    cfg: &TrainConfig,
    epochs: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<ParamVector>> {
    let mut out = Vec::with_capacity(obj.num_domains());
    for d in 0..obj.num_domains() {
        let mut theta = shared.clone();
        let mut opt = cfg.inner_optimizer(obj.layout());
        if obj.train_rows(d) > 0 {
            for _ in 0..epochs {
                for b in obj.domain_epoch(d, cfg.batch_size, rng)? {
                    let (_, grad) = checked(obj, &theta, &b, d)?;
                    opt.apply(&mut theta, &grad)?;
                }
            }
        }
        out.push(theta);
    }
    Ok(out)
}

/// Per-domain log-variances `s_i` of the uncertainty-weighted loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub log_vars: Vec<f64>,
    /// When false the `s_i` stay fixed.
    pub trainable: bool,
}

impl LossWeights {
    pub fn new(n_domains: usize) -> Self {
        Self {
            log_vars: vec![0.0; n_domains],
            trainable: true,
        }
    }

    pub fn frozen(n_domains: usize) -> Self {
        Self {
            trainable: false,
            ..Self::new(n_domains)
        }
    }
}

fn check_tags(log_vars: &[f64], sample_losses: &[f64], domains: &[usize]) -> Result<()> {
    if sample_losses.len() != domains.len() || domains.is_empty() {
        return Err(Error::InvalidBatch("one domain tag per sample loss is required".into()));
    }
    if let Some(&d) = domains.iter().find(|&&d| d >= log_vars.len()) {
        return Err(Error::IndexOutOfRange {
            what: "domain",
            index: d,
            bound: log_vars.len(),
        });
    }
    Ok(())
}

/// Batch objective `(1/B) sum_x exp(-s_d(x)) l_x + s_d(x)`.
pub fn weighted_total(log_vars: &[f64], sample_losses: &[f64], domains: &[usize]) -> Result<f64> {
    check_tags(log_vars, sample_losses, domains)?;
    let b = sample_losses.len() as f64;
    Ok(sample_losses
        .iter()
        .zip(domains)
        .map(|(&l, &d)| math::exp(-log_vars[d]) * l + log_vars[d])
        .sum::<f64>()
        / b)
}

/// Gradient of [`weighted_total`] with respect to every `s_i`:
/// `(n_i / B) (1 - exp(-s_i) L_i)` with `L_i` the mean loss of domain `i` in the batch.
pub fn weighted_log_var_grad(log_vars: &[f64], sample_losses: &[f64], domains: &[usize]) -> Result<Vec<f64>> {
    check_tags(log_vars, sample_losses, domains)?;
    let b = sample_losses.len() as f64;
    let mut grad = vec![0.0; log_vars.len()];
    for (&l, &d) in sample_losses.iter().zip(domains) {
        grad[d] += (1.0 - math::exp(-log_vars[d]) * l) / b;
    }
    Ok(grad)
}

/// Pooled training where each sample's loss is scaled by `exp(-s_domain)`;
/// the `s_i` take plain gradient steps at rate `alpha` on the same batch.
pub fn weighted_loss_epoch(
    shared: &ParamVector,
    opt: &OptState,
    weights: &LossWeights,
    obj: &NeuralObjective<'_>,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<(Step, LossWeights)> {
    if weights.log_vars.len() != obj.num_domains() {
        return Err(Error::InvalidArgument("one log-variance per domain is required".into()));
    }
    let batches = obj.pooled_epoch(cfg.batch_size, rng)?;
    let mut theta = shared.clone();
    let mut opt = opt.clone();
    let mut next = weights.clone();
    let mut meter = LossMeter::default();
    for b in &batches {
        let w: Vec<f64> = b.domains.iter().map(|&d| math::exp(-next.log_vars[d])).collect();
        let bp = model::loss_and_grad_weighted(obj.spec(), &theta, &b.batch, &w)?;
        if !bp.loss.is_finite() {
            return Err(Error::NonFinite("weighted loss"));
        }
        meter.push(bp.loss);
        if next.trainable {
            let gs = weighted_log_var_grad(&next.log_vars, &bp.sample_losses, &b.domains)?;
            for (s, g) in next.log_vars.iter_mut().zip(gs) {
                *s -= cfg.alpha * g;
            }
        }
        opt.apply(&mut theta, &bp.grad)?;
    }
    Ok((
        Step {
            params: theta,
            opt,
            mean_loss: meter.mean(),
        },
        next,
    ))
}

/// `g_i - (<g_i, g_j> / |g_j|^2) g_j` when the two conflict, else `g_i`.
pub fn project_conflicting(g_i: &ParamVector, g_j: &ParamVector) -> Result<ParamVector> {
    let inner = g_i.dot(g_j)?;
    let norm2 = g_j.dot(g_j)?;
    if inner >= 0.0 || norm2 == 0.0 {
        return Ok(g_i.clone());
    }
    let mut out = g_i.clone();
    out.axpy(-inner / norm2, g_j)?;
    Ok(out)
}

/// Gradient surgery: every `g_i` is projected against each original `g_j`
/// (`j != i`) in a random order.
pub fn pcgrad_project(grads: &[ParamVector], rng: &mut dyn RngCore) -> Result<Vec<ParamVector>> {
    let n = grads.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.shuffle(rng);
        let mut g = grads[i].clone();
        for j in others {
            g = project_conflicting(&g, &grads[j])?;
        }
        out.push(g);
    }
    Ok(out)
}

/// One update with the mean of the projected per-domain gradients.
pub fn pcgrad_step<O: Objective>(
    shared: &ParamVector,
    opt: &OptState,
    obj: &O,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<Step> {
    if obj.num_domains() < 2 {
        return Err(Error::InvalidConfig("pcgrad needs at least two domains".into()));
    }
    let domains = present(obj);
    if domains.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut meter = LossMeter::default();
    let mut grads = Vec::with_capacity(domains.len());
    for &d in &domains {
        let batch = obj.draw_batch(d, cfg.batch_size, rng)?;
        let (loss, grad) = checked(obj, shared, &batch, d)?;
        meter.push(loss);
        grads.push(grad);
    }
    let projected = pcgrad_project(&grads, rng)?;
    let refs: Vec<&ParamVector> = projected.iter().collect();
    let g = param::mean(&refs)?;
    let mut theta = shared.clone();
    let mut opt = opt.clone();
    opt.apply(&mut theta, &g)?;
    Ok(Step {
        params: theta,
        opt,
        mean_loss: meter.mean(),
    })
}

/// `inner_steps_per_domain` gradient-surgery updates.
pub fn pcgrad_epoch<O: Objective>(
    shared: &ParamVector,
    opt: &OptState,
    obj: &O,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<Step> {
    let mut step = Step {
        params: shared.clone(),
        opt: opt.clone(),
        mean_loss: f64::NAN,
    };
    let mut meter = LossMeter::default();
    for _ in 0..cfg.inner_steps_per_domain {
        step = pcgrad_step(&step.params, &step.opt, obj, cfg, rng)?;
        meter.push(step.mean_loss);
    }
    step.mean_loss = meter.mean();
    Ok(step)
}

/// Reptile: for each domain in shuffled order, an inner loop on that domain
/// alone starting from the current shared parameters, then
/// `shared + beta * (endpoint - shared)`.
pub fn reptile_epoch<O: Objective>(
    shared: &ParamVector,
    opt: &OptState,
    obj: &O,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<Step> {
    let mut order: Vec<usize> = (0..obj.num_domains()).collect();
    order.shuffle(rng);
    let mut theta = shared.clone();
    let mut opt = opt.clone();
    let mut meter = LossMeter::default();
    for d in order {
        if obj.train_rows(d) == 0 {
            continue;
        }
        let mut inner = theta.clone();
        visit(&mut inner, &mut opt, obj, d, cfg, rng, &mut meter)?;
        theta = outer_step(&theta, &inner, cfg.beta)?;
    }
    Ok(Step {
        params: theta,
        opt,
        mean_loss: meter.mean(),
    })
}

/// First-order MAML. Each of the `inner_steps_per_domain` meta-iterations
/// draws a support batch and a query batch per domain, adapts one SGD step at
/// `alpha` on the support batch, takes the query gradient at the adapted
/// parameters and moves the shared parameters by `-beta` times the mean of
/// those gradients over the domains.
pub fn fomaml_epoch<O: Objective>(
    shared: &ParamVector,
    obj: &O,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<Step> {
    for d in 0..obj.num_domains() {
        let rows = obj.train_rows(d);
        if rows > 0 && rows < 2 {
            return Err(Error::InvalidConfig(alloc::format!(
                "domain {d} has {rows} training row; support and query need two"
            )));
        }
    }
    let domains = present(obj);
    if domains.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut theta = shared.clone();
    let mut meter = LossMeter::default();
    for _ in 0..cfg.inner_steps_per_domain {
        let mut outer = Vec::with_capacity(domains.len());
        for &d in &domains {
            let support = obj.draw_batch(d, cfg.batch_size, rng)?;
            let query = obj.draw_batch(d, cfg.batch_size, rng)?;
            let (_, g_s) = checked(obj, &theta, &support, d)?;
            let mut adapted = theta.clone();
            adapted.axpy(-cfg.alpha, &g_s)?;
            let (loss, g_q) = checked(obj, &adapted, &query, d)?;
            meter.push(loss);
            outer.push(g_q);
        }
        let refs: Vec<&ParamVector> = outer.iter().collect();
        theta.axpy(-cfg.beta, &param::mean(&refs)?)?;
    }
    Ok(Step {
        params: theta,
        opt: OptState::sgd(cfg.beta),
        mean_loss: meter.mean(),
    })
}

/// Meta-train / meta-test split: a random `ceil(n/3)` of the domains are held out as meta-test.
pub fn mldg_split(n: usize, rng: &mut dyn RngCore) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidConfig("mldg needs at least two domains".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let n_test = n.div_ceil(3);
    let test = perm[..n_test].to_vec();
    let train = perm[n_test..].to_vec();
    Ok((train, test))
}

fn mean_grad<O: Objective>(
    obj: &O,
    params: &ParamVector,
    domains: &[usize],
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
    meter: &mut LossMeter,
) -> Result<Option<ParamVector>> {
    let mut grads = Vec::with_capacity(domains.len());
    for &d in domains {
        if obj.train_rows(d) == 0 {
            continue;
        }
        let batch = obj.draw_batch(d, cfg.batch_size, rng)?;
        let (loss, g) = checked(obj, params, &batch, d)?;
        meter.push(loss);
        grads.push(g);
    }
    if grads.is_empty() {
        return Ok(None);
    }
    let refs: Vec<&ParamVector> = grads.iter().collect();
    Ok(Some(param::mean(&refs)?))
}

/// First-order MLDG. The meta split is drawn once per epoch; each of the
/// `inner_steps_per_domain` updates is
/// `theta - beta * (g_train(theta) + w * g_test(theta - alpha * g_train(theta)))`
/// with `g_train`, `g_test` the mean minibatch gradients of the two groups.
pub fn mldg_epoch<O: Objective>(
    shared: &ParamVector,
    obj: &O,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<Step> {
    let (train, test) = mldg_split(obj.num_domains(), rng)?;
    let mut theta = shared.clone();
    let mut meter = LossMeter::default();
    for _ in 0..cfg.inner_steps_per_domain {
        let zero = || ParamVector::zeros(theta.layout());
        let g_train = mean_grad(obj, &theta, &train, cfg, rng, &mut meter)?.unwrap_or_else(zero);
        let mut adapted = theta.clone();
        adapted.axpy(-cfg.alpha, &g_train)?;
        let mut update = g_train;
        if cfg.mldg_weight != 0.0 {
            if let Some(g_test) = mean_grad(obj, &adapted, &test, cfg, rng, &mut meter)? {
                update.axpy(cfg.mldg_weight, &g_test)?;
            }
        }
        theta.axpy(-cfg.beta, &update)?;
        if !theta.is_finite() {
            return Err(Error::NonFinite("mldg update"));
        }
    }
    Ok(Step {
        params: theta,
        opt: OptState::sgd(cfg.beta),
        mean_loss: meter.mean(),
    })
}
