//! Domain regularization of the domain-specific parameters.

use alloc::vec::Vec;

use rand::seq::index;
use rand::RngCore;

use super::{LossMeter, Step, TrainConfig};
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::optim::{outer_step, OptState};
use crate::param::{combine, ParamVector};

/// `k` distinct domains other than `target`, in sampled order.
pub fn sample_aux_domains(n: usize, target: usize, k: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
    if target >= n {
        return Err(Error::IndexOutOfRange {
            what: "domain",
            index: target,
            bound: n,
        });
    }
    if k == 0 || k + 1 > n {
        return Err(Error::InvalidConfig(alloc::format!(
            "k = {k} must lie in 1..={} for {n} domains",
            n.saturating_sub(1)
        )));
    }
    Ok(index::sample(rng, n - 1, k)
        .into_iter()
        .map(|j| if j >= target { j + 1 } else { j })
        .collect())
}

/// One domain-regularization update of `specific` (the parameters of `target`).
///
/// For each sampled auxiliary domain `j` a copy of `specific` takes one inner
/// step on `j` and then one on `target`, always evaluated at
/// `combine(shared, copy)` with `shared` frozen; `specific` then moves a
/// fraction `gamma` toward the copy. The optimizer state carries over between
/// the sampled domains.
pub fn dr_update<O: Objective>(
    shared: &ParamVector,
    specific: &ParamVector,
    opt: &OptState,
    target: usize,
    obj: &O,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<Step> {
    shared.check_layout(specific)?;
    let aux = sample_aux_domains(obj.num_domains(), target, cfg.k, rng)?;
    let mut theta = specific.clone();
    let mut opt = opt.clone();
    let mut meter = LossMeter::default();
    if obj.train_rows(target) == 0 {
        return Ok(Step {
            params: theta,
            opt,
            mean_loss: meter.mean(),
        });
    }
    for j in aux {
        if obj.train_rows(j) == 0 {
            continue;
        }
        let mut tilde = theta.clone();
        for d in [j, target] {
            let batch = obj.draw_batch(d, cfg.batch_size, rng)?;
            let full = combine(shared, &tilde)?;
            let (loss, grad) = obj.loss_grad(&full, &batch).map_err(|e| e.in_domain(d))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { domain: d });
            }
            meter.push(loss);
            opt.apply(&mut tilde, &grad)?;
        }
        theta = outer_step(&theta, &tilde, cfg.gamma)?;
        if !theta.is_finite() {
            return Err(Error::Divergence { domain: target });
        }
    }
    Ok(Step {
        params: theta,
        opt,
        mean_loss: meter.mean(),
    })
}
