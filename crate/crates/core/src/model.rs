//! Embedding + MLP click-through model with hand-written backpropagation.
//!
//! A sample `(user, item)` is scored as
//!
//! ```text
//! x      = [U[user]; V[item]]                 (2 * embed_dim)
//! h_l    = act(W_l h_{l-1} + b_l)             for each hidden width
//! logit  = w_head . h_L + b_head
//! p      = sigmoid(logit)
//! ```
//!
//! and trained with binary cross-entropy averaged over the batch. Gradients
//! are exact; embedding rows that no sample references get exact zeros.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::math;
use crate::param::{BlockKind, Layout, ParamVector};
use crate::rng;

/// Half-width of the uniform initializer for embedding tables.
pub const EMBEDDING_INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => math::tanh(z),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl core::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidSpec(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(num_users: usize, num_items: usize, embed_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            num_users,
            num_items,
            embed_dim,
            hidden,
            activation: Activation::Relu,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::InvalidSpec("at least one hidden layer is required".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidSpec("hidden widths must be >= 1".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::InvalidSpec("embed_dim must be >= 1".into()));
        }
        if self.num_users == 0 || self.num_items == 0 {
            return Err(Error::InvalidSpec("user and item tables must be non-empty".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Arc<Layout> {
        let mut layout = Layout::new();
        layout.push("user_embedding", BlockKind::Embedding, self.num_users, self.embed_dim);
        layout.push("item_embedding", BlockKind::Embedding, self.num_items, self.embed_dim);
        let mut fan_in = 2 * self.embed_dim;
        for (i, &width) in self.hidden.iter().enumerate() {
            layout.push(&format!("dense{i}.weight"), BlockKind::Weight, width, fan_in);
            layout.push(&format!("dense{i}.bias"), BlockKind::Bias, 1, width);
            fan_in = width;
        }
        layout.push("head.weight", BlockKind::Weight, 1, fan_in);
        layout.push("head.bias", BlockKind::Bias, 1, 1);
        Arc::new(layout)
    }

    pub fn param_count(&self) -> usize {
        let mut n = (self.num_users + self.num_items) * self.embed_dim;
        let mut fan_in = 2 * self.embed_dim;
        for &w in &self.hidden {
            n += w * fan_in + w;
            fan_in = w;
        }
        n + fan_in + 1
    }
}

/// Column-aligned `(user, item, label)` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    user_ids: Vec<usize>,
    item_ids: Vec<usize>,
    labels: Vec<f64>,
}

impl Batch {
    pub fn new(user_ids: Vec<usize>, item_ids: Vec<usize>, labels: Vec<f64>) -> Result<Self> {
        if user_ids.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if user_ids.len() != item_ids.len() || user_ids.len() != labels.len() {
            return Err(Error::InvalidBatch("column lengths differ".into()));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidBatch("labels must be 0 or 1".into()));
        }
        Ok(Self {
            user_ids,
            item_ids,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn user_ids(&self) -> &[usize] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[usize] {
        &self.item_ids
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn check_bounds(&self, spec: &ModelSpec) -> Result<()> {
        if let Some(&u) = self.user_ids.iter().find(|&&u| u >= spec.num_users) {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: u,
                bound: spec.num_users,
            });
        }
        if let Some(&v) = self.item_ids.iter().find(|&&v| v >= spec.num_items) {
            return Err(Error::IndexOutOfRange {
                what: "item",
                index: v,
                bound: spec.num_items,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    weight: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Block offsets resolved once per call.
struct Plan {
    user: usize,
    item: usize,
    embed: usize,
    layers: Vec<Dense>,
    head_weight: usize,
    head_bias: usize,
}

impl Plan {
    fn new(spec: &ModelSpec) -> Self {
        let embed = spec.embed_dim;
        let user = 0;
        let item = spec.num_users * embed;
        let mut offset = item + spec.num_items * embed;
        let mut fan_in = 2 * embed;
        let mut layers = Vec::with_capacity(spec.hidden.len());
        for &fan_out in &spec.hidden {
            let weight = offset;
            let bias = weight + fan_out * fan_in;
            layers.push(Dense {
                weight,
                bias,
                fan_in,
                fan_out,
            });
            offset = bias + fan_out;
            fan_in = fan_out;
        }
        Plan {
            user,
            item,
            embed,
            layers,
            head_weight: offset,
            head_bias: offset + fan_in,
        }
    }
}

fn check_params(spec: &ModelSpec, params: &ParamVector) -> Result<()> {
    if params.len() != spec.param_count() || **params.layout() != *spec.layout() {
        return Err(Error::LayoutMismatch);
    }
    Ok(())
}

/// Fan-in scaled uniform weights, uniform embeddings, zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let layout = spec.layout();
    let mut params = ParamVector::zeros(&layout);
    let mut rng = rng::for_purpose(seed, rng::purpose::INIT);
    let values = params.values_mut();
    for block in layout.blocks() {
        let limit = match block.kind {
            BlockKind::Embedding => EMBEDDING_INIT_SCALE,
            BlockKind::Weight => math::sqrt(6.0 / block.cols as f64),
            BlockKind::Bias | BlockKind::Flat => continue,
        };
        let dist = Uniform::new(-limit, limit).expect("finite positive limit");
        for v in &mut values[block.range()] {
            *v = dist.sample(&mut rng);
        }
    }
    Ok(params)
}

/// Activations of one sample through every layer.
struct Trace {
    layers: Vec<Vec<f64>>,
}

impl Trace {
    fn new(plan: &Plan) -> Self {
        let mut layers = Vec::with_capacity(plan.layers.len() + 1);
        layers.push(vec![0.0; 2 * plan.embed]);
        for d in &plan.layers {
            layers.push(vec![0.0; d.fan_out]);
        }
        Trace { layers }
    }
}

fn forward_one(
    spec: &ModelSpec,
    plan: &Plan,
    p: &[f64],
    user: usize,
    item: usize,
    trace: &mut Trace,
) -> f64 {
    let e = plan.embed;
    {
        let x = &mut trace.layers[0];
        x[..e].copy_from_slice(&p[plan.user + user * e..plan.user + (user + 1) * e]);
        x[e..].copy_from_slice(&p[plan.item + item * e..plan.item + (item + 1) * e]);
    }
    for (l, d) in plan.layers.iter().enumerate() {
        let (prev, rest) = trace.layers.split_at_mut(l + 1);
        let input = &prev[l];
        let out = &mut rest[0];
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &p[d.weight + o * d.fan_in..d.weight + (o + 1) * d.fan_in];
            let z: f64 = p[d.bias + o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
            *slot = spec.activation.apply(z);
        }
    }
    let last = trace.layers.last().expect("at least the input layer");
    let head = &p[plan.head_weight..plan.head_weight + last.len()];
    p[plan.head_bias] + head.iter().zip(last).map(|(w, h)| w * h).sum::<f64>()
}

/// Per-sample click probabilities.
pub fn forward(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<Vec<f64>> {
    Ok(logits(spec, params, batch)?.into_iter().map(math::sigmoid).collect())
}

pub fn logits(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<Vec<f64>> {
    check_params(spec, params)?;
    batch.check_bounds(spec)?;
    let plan = Plan::new(spec);
    let mut trace = Trace::new(&plan);
    let p = params.values();
    let mut out = Vec::with_capacity(batch.len());
    for (&u, &v) in batch.user_ids.iter().zip(&batch.item_ids) {
        let z = forward_one(spec, &plan, p, u, v, &mut trace);
        if !z.is_finite() {
            return Err(Error::NonFinite("forward logit"));
        }
        out.push(z);
    }
    Ok(out)
}

/// Mean binary cross-entropy of the batch, without gradients.
pub fn batch_loss(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    let z = logits(spec, params, batch)?;
    let total: f64 = z
        .iter()
        .zip(&batch.labels)
        .map(|(&z, &y)| math::bce_with_logit(z, y))
        .sum();
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone)]
pub struct Backprop {
    /// `(1/B) * sum_x w_x * loss_x`
    pub loss: f64,
    /// Unweighted per-sample cross-entropy.
    pub sample_losses: Vec<f64>,
    pub grad: ParamVector,
}

/// Mean BCE and its exact gradient.
pub fn loss_and_grad(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
    let out = backprop(spec, params, batch, None)?;
    Ok((out.loss, out.grad))
}

/// Like [`loss_and_grad`] with a per-sample multiplier on each loss term.
pub fn loss_and_grad_weighted(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
    weights: &[f64],
) -> Result<Backprop> {
    if weights.len() != batch.len() {
        return Err(Error::InvalidBatch("one weight per sample is required".into()));
    }
    backprop(spec, params, batch, Some(weights))
}

fn backprop(spec: &ModelSpec, params: &ParamVector, batch: &Batch, weights: Option<&[f64]>) -> Result<Backprop> {
    check_params(spec, params)?;
    batch.check_bounds(spec)?;
    let plan = Plan::new(spec);
    let p = params.values();
    let mut grad = ParamVector::zeros(params.layout());
    let g = grad.values_mut();
    let mut trace = Trace::new(&plan);
    let inv_b = 1.0 / batch.len() as f64;
    let e = plan.embed;

    let max_width = plan.layers.iter().map(|d| d.fan_out).max().unwrap_or(0).max(2 * e);
    let mut delta = vec![0.0; max_width];
    let mut delta_prev = vec![0.0; max_width];

    let mut loss = 0.0;
    let mut sample_losses = Vec::with_capacity(batch.len());
    for s in 0..batch.len() {
        let (u, v, y) = (batch.user_ids[s], batch.item_ids[s], batch.labels[s]);
        let w = weights.map_or(1.0, |w| w[s]);
        let z = forward_one(spec, &plan, p, u, v, &mut trace);
        let l = math::bce_with_logit(z, y);
        if !l.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        sample_losses.push(l);
        loss += w * l;

        let dz = (math::sigmoid(z) - y) * w * inv_b;

        // head
        let last = trace.layers.last().expect("input layer");
        let width = last.len();
        for (j, &h) in last.iter().enumerate() {
            g[plan.head_weight + j] += dz * h;
        }
        g[plan.head_bias] += dz;
        for j in 0..width {
            delta[j] = dz * p[plan.head_weight + j] * spec.activation.derivative_from_output(last[j]);
        }

        // hidden layers, top down
        for l in (0..plan.layers.len()).rev() {
            let d = plan.layers[l];
            let input = &trace.layers[l];
            for o in 0..d.fan_out {
                let dl = delta[o];
                if dl == 0.0 {
                    continue;
                }
                let row = d.weight + o * d.fan_in;
                for (i, &x) in input.iter().enumerate() {
                    g[row + i] += dl * x;
                }
                g[d.bias + o] += dl;
            }
            for i in 0..d.fan_in {
                let mut acc = 0.0;
                for o in 0..d.fan_out {
                    acc += p[d.weight + o * d.fan_in + i] * delta[o];
                }
                delta_prev[i] = if l == 0 {
                    acc
                } else {
                    acc * spec.activation.derivative_from_output(input[i])
                };
            }
            core::mem::swap(&mut delta, &mut delta_prev);
        }

        // embeddings
        for k in 0..e {
            g[plan.user + u * e + k] += delta[k];
            g[plan.item + v * e + k] += delta[e + k];
        }
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(Backprop {
        loss: loss * inv_b,
        sample_losses,
        grad,
    })
}

/// Central difference of a gradient field along `v`:
/// `(grad(p + eps v) - grad(p - eps v)) / (2 eps)`.
pub fn central_hvp<F>(grad: F, params: &ParamVector, v: &ParamVector, eps: f64) -> Result<ParamVector>
where
    F: Fn(&ParamVector) -> Result<ParamVector>,
{
    params.check_layout(v)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be > 0".into()));
    }
    if v.norm() == 0.0 {
        return Err(Error::InvalidArgument("direction must be non-zero".into()));
    }
    let mut plus = params.clone();
    plus.axpy(eps, v)?;
    let mut minus = params.clone();
    minus.axpy(-eps, v)?;
    let diff = grad(&plus)?.sub(&grad(&minus)?)?;
    let out = diff.scale(1.0 / (2.0 * eps));
    if !out.is_finite() {
        return Err(Error::NonFinite("hessian-vector product"));
    }
    Ok(out)
}

/// Hessian-vector product of the batch loss, by central differences of gradients.
pub fn hvp(spec: &ModelSpec, params: &ParamVector, batch: &Batch, v: &ParamVector, eps: f64) -> Result<ParamVector> {
    central_hvp(|p| loss_and_grad(spec, p, batch).map(|(_, g)| g), params, v, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tiny(activation: Activation) -> ModelSpec {
        ModelSpec {
            num_users: 5,
            num_items: 4,
            embed_dim: 3,
            hidden: vec![6, 4],
            activation,
            seed: 0,
        }
    }

    fn batch() -> Batch {
        Batch::new(vec![0, 1, 2, 1, 0], vec![1, 2, 0, 3, 1], vec![1.0, 0.0, 1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn param_count_matches_layout() {
        let spec = tiny(Activation::Relu);
        assert_eq!(spec.layout().len(), spec.param_count());
        // 27 embedding + (6*6+6) + (4*6+4) + 4 + 1
        assert_eq!(spec.param_count(), 27 + 42 + 28 + 5);
    }

    #[test]
    fn spec_validation() {
        let mut s = tiny(Activation::Relu);
        s.hidden.clear();
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
        let mut s = tiny(Activation::Relu);
        s.hidden = vec![3, 0];
        assert!(s.validate().is_err());
        let mut s = tiny(Activation::Relu);
        s.embed_dim = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = tiny(Activation::Relu);
        let a = init_params(&spec, 7).unwrap();
        let b = init_params(&spec, 7).unwrap();
        assert!(a.bit_eq(&b));
        for block in spec.layout().blocks() {
            if block.kind == BlockKind::Bias {
                assert!(a.values()[block.range()].iter().all(|&v| v == 0.0), "{}", block.name);
            }
        }
        let c = init_params(&spec, 8).unwrap();
        assert!(a.values().iter().zip(c.values()).any(|(x, y)| x != y));
    }

    #[test]
    fn zero_params_score_one_half_and_loss_ln2() {
        let spec = tiny(Activation::Relu);
        let params = ParamVector::zeros(&spec.layout());
        let b = Batch::new(vec![0, 1, 2, 3], vec![0, 1, 2, 3], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(forward(&spec, &params, &b).unwrap().iter().all(|&p| p == 0.5));
        let (loss, _) = loss_and_grad(&spec, &params, &b).unwrap();
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn duplicated_sample_scores_identically() {
        let spec = tiny(Activation::Tanh);
        let params = init_params(&spec, 3).unwrap();
        let b = Batch::new(vec![2, 2], vec![3, 3], vec![1.0, 1.0]).unwrap();
        let s = forward(&spec, &params, &b).unwrap();
        assert_eq!(s[0].to_bits(), s[1].to_bits());
    }

    #[test]
    fn hand_built_single_unit_network() {
        // embed_dim 1, one hidden unit, relu.
        let spec = ModelSpec {
            num_users: 1,
            num_items: 1,
            embed_dim: 1,
            hidden: vec![1],
            activation: Activation::Relu,
            seed: 0,
        };
        let layout = spec.layout();
        // [U, V, W(1x2), b, head_w, head_b]
        let params = ParamVector::from_values(&layout, vec![0.5, -1.0, 2.0, 0.5, 0.25, 1.5, -0.75]).unwrap();
        let b = Batch::new(vec![0], vec![0], vec![1.0]).unwrap();
        // h = relu(2*0.5 + 0.5*(-1) + 0.25) = 0.75; logit = 1.5*0.75 - 0.75 = 0.375
        let expected = 1.0 / (1.0 + (-0.375f64).exp());
        let got = forward(&spec, &params, &b).unwrap()[0];
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_index_is_typed() {
        let spec = tiny(Activation::Relu);
        let params = ParamVector::zeros(&spec.layout());
        let b = Batch::new(vec![9], vec![0], vec![1.0]).unwrap();
        assert_eq!(
            forward(&spec, &params, &b),
            Err(Error::IndexOutOfRange {
                what: "user",
                index: 9,
                bound: 5
            })
        );
    }

    #[test]
    fn batch_validation() {
        assert_eq!(Batch::new(vec![], vec![], vec![]), Err(Error::EmptyBatch));
        assert!(Batch::new(vec![0], vec![0, 1], vec![1.0]).is_err());
        assert!(Batch::new(vec![0], vec![0], vec![2.0]).is_err());
    }

    #[test]
    fn unreferenced_embedding_rows_get_zero_gradient() {
        let spec = tiny(Activation::Tanh);
        let params = init_params(&spec, 1).unwrap();
        let b = Batch::new(vec![1], vec![2], vec![1.0]).unwrap();
        let (_, g) = loss_and_grad(&spec, &params, &b).unwrap();
        let users = g.block("user_embedding").unwrap();
        for (row, chunk) in users.chunks(3).enumerate() {
            assert_eq!(chunk.iter().any(|&v| v != 0.0), row == 1, "user row {row}");
        }
        let items = g.block("item_embedding").unwrap();
        for (row, chunk) in items.chunks(3).enumerate() {
            assert_eq!(chunk.iter().any(|&v| v != 0.0), row == 2, "item row {row}");
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for act in [Activation::Tanh, Activation::Relu] {
            let spec = tiny(act);
            let params = init_params(&spec, 11).unwrap();
            let b = batch();
            let (_, g) = loss_and_grad(&spec, &params, &b).unwrap();
            let mut rng = rng::Rng::seed_from_u64(5);
            let h = 1e-4;
            let at = |i: usize, dx: f64| {
                let mut p = params.clone();
                p.values_mut()[i] += dx;
                batch_loss(&spec, &p, &b).unwrap()
            };
            for _ in 0..40 {
                let i = rng.random_range(0..params.len());
                // five-point stencil
                let fd = (8.0 * (at(i, h) - at(i, -h)) - (at(i, 2.0 * h) - at(i, -2.0 * h))) / (12.0 * h);
                let err = (fd - g.values()[i]).abs() / fd.abs().max(g.values()[i].abs()).max(1e-12);
                assert!(err <= 1e-5, "{act:?} coord {i}: fd={fd} analytic={}", g.values()[i]);
            }
        }
    }

    #[test]
    fn weighted_with_unit_weights_is_bitwise_unweighted() {
        let spec = tiny(Activation::Relu);
        let params = init_params(&spec, 2).unwrap();
        let b = batch();
        let (l, g) = loss_and_grad(&spec, &params, &b).unwrap();
        let w = loss_and_grad_weighted(&spec, &params, &b, &[1.0; 5]).unwrap();
        assert_eq!(l.to_bits(), w.loss.to_bits());
        assert!(g.bit_eq(&w.grad));
    }

    #[test]
    fn hvp_rejects_zero_direction() {
        let spec = tiny(Activation::Tanh);
        let params = init_params(&spec, 2).unwrap();
        let v = ParamVector::zeros(params.layout());
        assert!(matches!(hvp(&spec, &params, &batch(), &v, 1e-4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn hvp_is_symmetric_in_directions() {
        // u' H v == v' H u for a smooth (tanh) network
        let spec = tiny(Activation::Tanh);
        let params = init_params(&spec, 4).unwrap();
        let b = batch();
        let mut rng = rng::Rng::seed_from_u64(9);
        let mut rand_dir = || {
            let vals = (0..params.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            ParamVector::from_values(params.layout(), vals).unwrap()
        };
        let (u, v) = (rand_dir(), rand_dir());
        let hu = hvp(&spec, &params, &b, &u, 1e-4).unwrap();
        let hv = hvp(&spec, &params, &b, &v, 1e-4).unwrap();
        let (a, c) = (v.dot(&hu).unwrap(), u.dot(&hv).unwrap());
        assert!((a - c).abs() <= 1e-6 * a.abs().max(c.abs()).max(1e-3), "{a} vs {c}");
    }
}
