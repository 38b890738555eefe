//! Domain negotiation and its degenerate form, alternate training.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::RngCore;

use super::{LossMeter, Step, TrainConfig};
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::optim::{outer_step, OptState};
use crate::param::ParamVector;

/// `steps` inner updates of `theta` on one domain.
pub(crate) fn visit<O: Objective>(
    theta: &mut ParamVector,
    opt: &mut OptState,
    obj: &O,
    domain: usize,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
    meter: &mut LossMeter,
) -> Result<()> {
    for _ in 0..cfg.inner_steps_per_domain {
        let batch = obj.draw_batch(domain, cfg.batch_size, rng)?;
        let (loss, grad) = obj.loss_grad(theta, &batch).map_err(|e| e.in_domain(domain))?;
        if !loss.is_finite() {
            return Err(Error::Divergence { domain });
        }
        meter.push(loss);
        opt.apply(theta, &grad)?;
        if !theta.is_finite() {
            return Err(Error::Divergence { domain });
        }
    }
    Ok(())
}

/// One shuffled sequential pass over the domains; returns the inner-loop endpoint.
fn sequential_pass<O: Objective>(
    shared: &ParamVector,
    opt: &OptState,
    obj: &O,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<Step> {
    let n = obj.num_domains();
    if n == 0 {
        return Err(Error::InvalidArgument("no domains to train on".into()));
    }
    if (0..n).all(|d| obj.train_rows(d) == 0) {
        return Err(Error::EmptyBatch);
    }
    shared.check_layout(&ParamVector::zeros(obj.layout()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut theta = shared.clone();
    let mut opt = opt.clone();
    let mut meter = LossMeter::default();
    for d in order {
        if obj.train_rows(d) == 0 {
            continue;
        }
        visit(&mut theta, &mut opt, obj, d, cfg, rng, &mut meter)?;
    }
    Ok(Step {
        params: theta,
        opt,
        mean_loss: meter.mean(),
    })
}

/// Domain negotiation: a sequential pass through the shuffled domains
/// followed by `shared + beta * (endpoint - shared)`.
///
/// Domains without training rows are skipped.
pub fn dn_epoch<O: Objective>(
    shared: &ParamVector,
    opt: &OptState,
    obj: &O,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<Step> {
    let mut step = sequential_pass(shared, opt, obj, cfg, rng)?;
    step.params = outer_step(shared, &step.params, cfg.beta)?;
    Ok(step)
}

/// Alternate training: the same sequential pass, kept as is.
///
/// Consumes the random stream exactly like [`dn_epoch`].
pub fn alternate_epoch<O: Objective>(
    shared: &ParamVector,
    opt: &OptState,
    obj: &O,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<Step> {
    sequential_pass(shared, opt, obj, cfg, rng)
}
