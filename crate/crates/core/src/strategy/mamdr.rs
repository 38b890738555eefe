//! Domain negotiation on the shared parameters plus domain regularization on
//! every domain-specific vector.

use rand::RngCore;

use super::{dn_epoch, dr_update, MdrState, TrainConfig};
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::rng;

/// One epoch; DR for every domain runs against the freshly negotiated shared parameters.
///
/// The returned loss is the mean minibatch loss of the negotiation pass.
pub fn mamdr_epoch<O: Objective>(
    state: &MdrState,
    obj: &O,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<(MdrState, f64)> {
    let n = obj.num_domains();
    if state.num_domains() != n || state.specific_opt.len() != n {
        return Err(Error::InvalidArgument("state and objective disagree on the number of domains".into()));
    }
    let dn = dn_epoch(&state.shared, &state.shared_opt, obj, cfg, rng)?;
    let mut next = state.clone();
    next.shared = dn.params;
    next.shared_opt = dn.opt;
    for i in 0..n {
        let step = dr_update(&next.shared, &state.specific[i], &state.specific_opt[i], i, obj, cfg, rng)?;
        next.specific[i] = step.params;
        next.specific_opt[i] = step.opt;
    }
    next.epoch += 1;
    Ok((next, dn.mean_loss))
}

/// `cfg.epochs` epochs, each on its own random stream keyed by the epoch index.
pub fn mamdr_train<O: Objective>(state: &MdrState, obj: &O, cfg: &TrainConfig) -> Result<MdrState> {
    cfg.validate()?;
    let mut current = state.clone();
    for _ in 0..cfg.epochs {
        let mut r = rng::for_epoch(cfg.seed, current.epoch, 0);
        current = mamdr_epoch(&current, obj, cfg, &mut r)?.0;
    }
    Ok(current)
}
