//! First-order update rules on [`ParamVector`]s.

use crate::error::{Error, Result};
use crate::math;
use crate::param::ParamVector;

use alloc::sync::Arc;

use crate::param::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl core::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidConfig(alloc::format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state owned by one trainer.
#[derive(Debug, Clone)]
pub struct OptState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub hyper: AdamHyper,
    pub step_count: u64,
    /// First and second moments; `None` for SGD.
    pub moments: Option<(ParamVector, ParamVector)>,
}

impl OptState {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            hyper: AdamHyper::default(),
            step_count: 0,
            moments: None,
        }
    }

    pub fn adam(layout: &Arc<Layout>, lr: f64, hyper: AdamHyper) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            hyper,
            step_count: 0,
            moments: Some((ParamVector::zeros(layout), ParamVector::zeros(layout))),
        }
    }

    pub fn new(kind: OptimizerKind, layout: &Arc<Layout>, lr: f64, hyper: AdamHyper) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(lr),
            OptimizerKind::Adam => Self::adam(layout, lr, hyper),
        }
    }

    /// In-place update of `params`. Bitwise identical to [`sgd_step`] / [`adam_step`].
    pub fn apply(&mut self, params: &mut ParamVector, grad: &ParamVector) -> Result<()> {
        params.check_layout(grad)?;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = self.lr;
                for (p, g) in params.values_mut().iter_mut().zip(grad.values()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let (m1, m2) = self
                    .moments
                    .as_mut()
                    .ok_or_else(|| Error::InvalidConfig("adam state without moments".into()))?;
                params.check_layout(m1)?;
                let AdamHyper { beta1, beta2, eps } = self.hyper;
                let t = self.step_count + 1;
                let c1 = 1.0 - math::powi(beta1, t);
                let c2 = 1.0 - math::powi(beta2, t);
                let lr = self.lr;
                let it = params
                    .values_mut()
                    .iter_mut()
                    .zip(grad.values())
                    .zip(m1.values_mut().iter_mut().zip(m2.values_mut().iter_mut()));
                for ((p, &g), (m, v)) in it {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (math::sqrt(v_hat) + eps);
                }
            }
        }
        self.step_count += 1;
        Ok(())
    }

    /// Componentwise mean of several states of the same kind (parameter-server reduction).
    pub fn mean(states: &[&OptState]) -> Result<OptState> {
        let first = *states
            .first()
            .ok_or_else(|| Error::InvalidArgument("mean of zero optimizer states".into()))?;
        let mut out = first.clone();
        if let Some((m1, m2)) = out.moments.as_mut() {
            let mut firsts = alloc::vec::Vec::with_capacity(states.len());
            let mut seconds = alloc::vec::Vec::with_capacity(states.len());
            for s in states {
                let (a, b) = s.moments.as_ref().ok_or(Error::LayoutMismatch)?;
                firsts.push(a);
                seconds.push(b);
            }
            *m1 = crate::param::mean(&firsts)?;
            *m2 = crate::param::mean(&seconds)?;
        }
        out.step_count = states.iter().map(|s| s.step_count).max().unwrap_or(0);
        Ok(out)
    }
}

/// `params - lr * grad`
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument("learning rate must be > 0".into()));
    }
    let mut out = params.clone();
    OptState::sgd(lr).apply(&mut out, grad)?;
    Ok(out)
}

/// One bias-corrected Adam step; returns the new parameters and state.
pub fn adam_step(state: &OptState, params: &ParamVector, grad: &ParamVector) -> Result<(ParamVector, OptState)> {
    if state.kind != OptimizerKind::Adam {
        return Err(Error::InvalidConfig("adam_step needs an adam state".into()));
    }
    let mut next = state.clone();
    let mut out = params.clone();
    next.apply(&mut out, grad)?;
    Ok((out, next))
}

/// Outer-loop move toward an inner-loop endpoint: `origin + lr * (endpoint - origin)`.
///
/// `lr == 1` returns `endpoint` exactly.
pub fn outer_step(origin: &ParamVector, endpoint: &ParamVector, lr: f64) -> Result<ParamVector> {
    origin.check_layout(endpoint)?;
    if !(0.0..=1.0).contains(&lr) {
        return Err(Error::InvalidArgument("outer learning rate must lie in [0, 1]".into()));
    }
    if lr == 1.0 {
        return Ok(endpoint.clone());
    }
    let mut out = origin.clone();
    for (o, &e) in out.values_mut().iter_mut().zip(endpoint.values()) {
        *o += lr * (e - *o);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::from_values(&Layout::flat(values.len()), values.to_vec()).unwrap()
    }

    #[test]
    fn sgd_zero_grad_is_fixed_point() {
        let p = pv(&[1.0, -2.0, 3.5]);
        assert!(sgd_step(&p, &pv(&[0.0; 3]), 0.1).unwrap().bit_eq(&p));
    }

    #[test]
    fn sgd_from_zero_is_negative_scaled_grad() {
        let g = pv(&[1.0, -2.0, 0.5]);
        let out = sgd_step(&pv(&[0.0; 3]), &g, 0.25).unwrap();
        assert_eq!(out.values(), &[-0.25, 0.5, -0.125]);
    }

    #[test]
    fn two_sgd_steps_on_linear_loss_sum_the_gradients() {
        // L(p) = c . p has constant gradient c: two steps == one step with 2c.
        let c = pv(&[0.5, -1.5, 2.0]);
        let p0 = pv(&[1.0, 1.0, 1.0]);
        let two = sgd_step(&sgd_step(&p0, &c, 0.125).unwrap(), &c, 0.125).unwrap();
        let one = sgd_step(&p0, &c.scale(2.0), 0.125).unwrap();
        assert_eq!(two.values(), one.values());
    }

    #[test]
    fn sgd_rejects_mismatched_layout_and_bad_lr() {
        assert_eq!(sgd_step(&pv(&[0.0; 2]), &pv(&[0.0; 3]), 0.1), Err(Error::LayoutMismatch));
        assert!(sgd_step(&pv(&[0.0; 2]), &pv(&[0.0; 2]), 0.0).is_err());
    }

    #[test]
    fn adam_first_step_is_normalized_gradient() {
        let g = pv(&[0.3, -2.0, 1e-3]);
        let p0 = pv(&[0.0; 3]);
        let lr = 0.01;
        let state = OptState::adam(p0.layout(), lr, AdamHyper::default());
        let (p1, s1) = adam_step(&state, &p0, &g).unwrap();
        assert_eq!(s1.step_count, 1);
        // bias-corrected moments after one step are g and g^2
        for (&x, &gi) in p1.values().iter().zip(g.values()) {
            let expected = -lr * gi / (gi.abs() + 1e-8);
            assert!((x - expected).abs() <= 1e-15, "{x} vs {expected}");
            assert!((x + lr * gi.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_zero_grad_never_moves() {
        let p0 = pv(&[0.4, -0.2]);
        let mut state = OptState::adam(p0.layout(), 0.1, AdamHyper::default());
        let mut p = p0.clone();
        for _ in 0..10 {
            let (np, ns) = adam_step(&state, &p, &pv(&[0.0, 0.0])).unwrap();
            p = np;
            state = ns;
        }
        assert!(p.bit_eq(&p0));
        assert_eq!(state.step_count, 10);
    }

    #[test]
    fn adam_step_rejects_sgd_state() {
        let p = pv(&[0.0]);
        assert!(adam_step(&OptState::sgd(0.1), &p, &p).is_err());
    }

    #[test]
    fn outer_step_endpoints() {
        let o = pv(&[1.0, 2.0, -3.0]);
        let e = pv(&[0.1, 2.7, 5.0]);
        assert!(outer_step(&o, &e, 1.0).unwrap().bit_eq(&e));
        assert!(outer_step(&o, &e, 0.0).unwrap().bit_eq(&o));
        assert!(outer_step(&o, &o, 0.37).unwrap().bit_eq(&o));
        let half = outer_step(&o, &e, 0.5).unwrap();
        assert_eq!(half.values(), &[0.55, 2.35, 1.0]);
    }

    #[test]
    fn outer_step_rejects_out_of_range_lr() {
        let o = pv(&[1.0]);
        assert!(outer_step(&o, &o, 1.5).is_err());
        assert!(outer_step(&o, &pv(&[1.0, 2.0]), 0.5).is_err());
    }

    #[test]
    fn state_mean_averages_moments() {
        let l = Layout::flat(2);
        let mut a = OptState::adam(&l, 0.1, AdamHyper::default());
        let mut b = a.clone();
        let mut p = ParamVector::zeros(&l);
        a.apply(&mut p, &pv(&[1.0, 0.0])).unwrap();
        b.apply(&mut p, &pv(&[0.0, 1.0])).unwrap();
        let m = OptState::mean(&[&a, &b]).unwrap();
        let (m1, _) = m.moments.unwrap();
        // each state saw one unit gradient in one coordinate: m = 1 - beta1 there, 0 elsewhere
        let expected = (1.0 - 0.9) / 2.0;
        assert!(m1.values().iter().all(|&x| x == expected));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn outer_step_stays_on_segment(
            pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..16),
            lr in 0.0f64..=1.0,
        ) {
            let l = Layout::flat(pairs.len());
            let o = ParamVector::from_values(&l, pairs.iter().map(|p| p.0).collect::<Vec<_>>()).unwrap();
            let e = ParamVector::from_values(&l, pairs.iter().map(|p| p.1).collect::<Vec<_>>()).unwrap();
            let out = outer_step(&o, &e, lr).unwrap();
            for ((&x, &a), &b) in out.values().iter().zip(o.values()).zip(e.values()) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
                prop_assert!(x >= lo - slack && x <= hi + slack);
            }
        }
    }
}
