//! Gradient-conflict measurement and analytic checks of the negotiation and
//! regularization updates.
//!
//! The checks run the real strategy code on [`QuadSet`], a multi-domain
//! objective made of quadratics `L_i(t) = 1/2 (t - c_i)^T A_i (t - c_i)` whose
//! gradients and Hessians are known in closed form.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{self, Batch, ModelSpec};
use crate::objective::{NeuralObjective, Objective, PooledObjective};
use crate::optim::OptState;
use crate::param::{Layout, ParamVector};
use crate::rng;
use crate::strategy::{self, dr_update, MdrState, TrainConfig};

/// Quadratic loss with a symmetric positive-definite Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadDomain {
    dim: usize,
    /// Row-major `dim x dim` Hessian.
    a: Vec<f64>,
    c: Vec<f64>,
}

impl QuadDomain {
    pub fn new(a: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let dim = c.len();
        if dim == 0 || a.len() != dim * dim {
            return Err(Error::InvalidArgument("hessian must be dim x dim".into()));
        }
        for i in 0..dim {
            for j in 0..i {
                if a[i * dim + j] != a[j * dim + i] {
                    return Err(Error::InvalidArgument("hessian must be symmetric".into()));
                }
            }
        }
        if !cholesky_ok(&a, dim) {
            return Err(Error::InvalidArgument("hessian must be positive definite".into()));
        }
        Ok(Self { dim, a, c })
    }

    /// Random instance: `A = Q diag(l) Q^T` with a random orthogonal `Q` and
    /// eigenvalues uniform in `[eig_lo, eig_hi]`; `c` standard normal.
    pub fn random(dim: usize, eig_lo: f64, eig_hi: f64, rng: &mut dyn RngCore) -> Result<Self> {
        if !(eig_lo > 0.0 && eig_hi >= eig_lo) {
            return Err(Error::InvalidArgument("eigenvalue range must be positive".into()));
        }
        let q = random_orthogonal(dim, rng)?;
        let eig: Vec<f64> = (0..dim).map(|_| rng.random_range(eig_lo..=eig_hi)).collect();
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let v: f64 = (0..dim).map(|k| q[i * dim + k] * eig[k] * q[j * dim + k]).sum();
                a[i * dim + j] = v;
                a[j * dim + i] = v;
            }
        }
        let c = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        Self::new(a, c)
    }

    /// `A = I`.
    pub fn isotropic(c: Vec<f64>) -> Result<Self> {
        let dim = c.len();
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = 1.0;
        }
        Self::new(a, c)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hessian(&self) -> &[f64] {
        &self.a
    }

    pub fn center(&self) -> &[f64] {
        &self.c
    }

    fn check(&self, v: &ParamVector) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::LayoutMismatch);
        }
        Ok(())
    }

    fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| self.a[i * self.dim..(i + 1) * self.dim].iter().zip(v).map(|(x, y)| x * y).sum())
            .collect()
    }

    fn shifted(&self, theta: &ParamVector) -> Vec<f64> {
        theta.values().iter().zip(&self.c).map(|(t, c)| t - c).collect()
    }

    pub fn loss(&self, theta: &ParamVector) -> Result<f64> {
        self.check(theta)?;
        let d = self.shifted(theta);
        Ok(0.5 * d.iter().zip(self.matvec(&d)).map(|(x, y)| x * y).sum::<f64>())
    }

    /// `A (theta - c)`.
    pub fn grad(&self, theta: &ParamVector) -> Result<ParamVector> {
        self.check(theta)?;
        ParamVector::from_values(theta.layout(), self.matvec(&self.shifted(theta)))
    }

    /// `A v`.
    pub fn hvp(&self, v: &ParamVector) -> Result<ParamVector> {
        self.check(v)?;
        ParamVector::from_values(v.layout(), self.matvec(v.values()))
    }

    /// `A^T v`, computed from the transposed entries.
    pub fn hvp_transposed(&self, v: &ParamVector) -> Result<ParamVector> {
        self.check(v)?;
        let out = (0..self.dim)
            .map(|j| (0..self.dim).map(|i| self.a[i * self.dim + j] * v.values()[i]).sum())
            .collect();
        ParamVector::from_values(v.layout(), out)
    }
}

fn cholesky_ok(a: &[f64], n: usize) -> bool {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let djj = math::sqrt(d);
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    true
}

/// Gram-Schmidt on a Gaussian matrix; columns are orthonormal.
fn random_orthogonal(n: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for u in &cols {
                let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= p * y;
                }
            }
        }
        let norm = math::sqrt(v.iter().map(|x| x * x).sum());
        if norm < 1e-8 {
            continue;
        }
        cols.push(v.into_iter().map(|x| x / norm).collect());
    }
    let mut q = vec![0.0; n * n];
    for (k, col) in cols.iter().enumerate() {
        for i in 0..n {
            q[i * n + k] = col[i];
        }
    }
    Ok(q)
}

/// Several quadratics as a multi-domain objective; a "batch" is the domain index
/// and drawing one consumes no randomness.
#[derive(Debug, Clone)]
pub struct QuadSet {
    domains: Vec<QuadDomain>,
    layout: Arc<Layout>,
}

impl QuadSet {
    pub fn new(domains: Vec<QuadDomain>) -> Result<Self> {
        let dim = domains.first().ok_or(Error::InvalidArgument("no domains".into()))?.dim;
        if domains.iter().any(|d| d.dim != dim) {
            return Err(Error::InvalidArgument("quadratic domains must share a dimension".into()));
        }
        Ok(Self {
            domains,
            layout: Layout::flat(dim),
        })
    }

    pub fn domains(&self) -> &[QuadDomain] {
        &self.domains
    }

    pub fn vector(&self, values: Vec<f64>) -> Result<ParamVector> {
        ParamVector::from_values(&self.layout, values)
    }
}

impl Objective for QuadSet {
    type Batch = usize;

    fn num_domains(&self) -> usize {
        self.domains.len()
    }

    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    /// An analytic loss stands for an unbounded population of rows.
    fn train_rows(&self, domain: usize) -> usize {
        if domain < self.domains.len() {
            usize::MAX
        } else {
            0
        }
    }

    fn draw_batch(&self, domain: usize, _batch_size: usize, _rng: &mut dyn RngCore) -> Result<usize> {
        if domain >= self.domains.len() {
            return Err(Error::IndexOutOfRange {
                what: "domain",
                index: domain,
                bound: self.domains.len(),
            });
        }
        Ok(domain)
    }

    fn loss_grad(&self, params: &ParamVector, batch: &usize) -> Result<(f64, ParamVector)> {
        let d = self.domains.get(*batch).ok_or(Error::IndexOutOfRange {
            what: "domain",
            index: *batch,
            bound: self.domains.len(),
        })?;
        Ok((d.loss(params)?, d.grad(params)?))
    }
}

impl PooledObjective for QuadSet {
    fn pooled_epoch(&self, _batch_size: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.domains.len()).collect();
        order.shuffle(rng);
        Ok(order)
    }

    fn domain_epoch(&self, domain: usize, batch_size: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        Ok(vec![self.draw_batch(domain, batch_size, rng)?])
    }
}

/// Twice-differentiable loss with gradient and Hessian-vector product.
pub trait SmoothLoss {
    fn grad(&self, theta: &ParamVector) -> Result<ParamVector>;
    fn hvp(&self, theta: &ParamVector, v: &ParamVector) -> Result<ParamVector>;
}

impl SmoothLoss for QuadDomain {
    fn grad(&self, theta: &ParamVector) -> Result<ParamVector> {
        QuadDomain::grad(self, theta)
    }

    fn hvp(&self, _theta: &ParamVector, v: &ParamVector) -> Result<ParamVector> {
        QuadDomain::hvp(self, v)
    }
}

/// The neural loss on one fixed batch; Hessian-vector products by central differences.
#[derive(Debug, Clone)]
pub struct FixedBatchLoss<'a> {
    pub spec: &'a ModelSpec,
    pub batch: Batch,
    pub eps: f64,
}

impl SmoothLoss for FixedBatchLoss<'_> {
    fn grad(&self, theta: &ParamVector) -> Result<ParamVector> {
        Ok(model::loss_and_grad(self.spec, theta, &self.batch)?.1)
    }

    fn hvp(&self, theta: &ParamVector, v: &ParamVector) -> Result<ParamVector> {
        if v.is_zero() {
            return Ok(ParamVector::zeros(v.layout()));
        }
        model::hvp(self.spec, theta, &self.batch, v, self.eps)
    }
}

/// Pairwise gradient geometry of several domains.
#[derive(Debug, Clone)]
pub struct GradientReport {
    pub grads: Vec<ParamVector>,
    /// `inner[i][j] = <g_i, g_j>`.
    pub inner: Vec<Vec<f64>>,
    /// Cosine similarity; 0 where either gradient vanishes.
    pub cosine: Vec<Vec<f64>>,
    /// Fraction of pairs `i < j` with a negative inner product.
    pub conflict_rate: f64,
}

impl GradientReport {
    pub fn from_grads(grads: Vec<ParamVector>) -> Result<Self> {
        let n = grads.len();
        if n < 2 {
            return Err(Error::InvalidArgument("conflict needs at least two gradients".into()));
        }
        let mut inner = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v = grads[i].dot(&grads[j])?;
                inner[i][j] = v;
                inner[j][i] = v;
            }
        }
        let norms: Vec<f64> = (0..n).map(|i| math::sqrt(inner[i][i])).collect();
        let mut cosine = vec![vec![0.0; n]; n];
        let mut conflicts = 0usize;
        for i in 0..n {
            for j in 0..n {
                let denom = norms[i] * norms[j];
                cosine[i][j] = if denom > 0.0 { inner[i][j] / denom } else { 0.0 };
                if i < j && inner[i][j] < 0.0 {
                    conflicts += 1;
                }
            }
        }
        let pairs = n * (n - 1) / 2;
        Ok(Self {
            grads,
            inner,
            cosine,
            conflict_rate: conflicts as f64 / pairs as f64,
        })
    }

    pub fn num_domains(&self) -> usize {
        self.grads.len()
    }

    /// Mean cosine over pairs `i < j`.
    pub fn mean_cosine(&self) -> f64 {
        let n = self.num_domains();
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sum += self.cosine[i][j];
            }
        }
        sum / (n * (n - 1) / 2) as f64
    }

    /// `(i, j, inner, cosine)` for every pair `i < j`.
    pub fn pairs(&self) -> Vec<(usize, usize, f64, f64)> {
        let n = self.num_domains();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push((i, j, self.inner[i][j], self.cosine[i][j]));
            }
        }
        out
    }
}

/// One fixed minibatch per domain, drawn from the probe stream of `seed`.
pub fn probe_batches<O: Objective>(obj: &O, batch_size: usize, seed: u64) -> Result<Vec<O::Batch>> {
    let mut r = rng::for_purpose(seed, rng::purpose::PROBE);
    (0..obj.num_domains())
        .map(|d| {
            if obj.train_rows(d) == 0 {
                return Err(Error::Dataset(alloc::format!("domain {d} has no training rows to probe")));
            }
            obj.draw_batch(d, batch_size, &mut r)
        })
        .collect()
}

/// Gradient report of `params` on the given per-domain probe batches.
pub fn conflict_on<O: Objective>(obj: &O, params: &ParamVector, probes: &[O::Batch]) -> Result<GradientReport> {
    if probes.len() != obj.num_domains() {
        return Err(Error::InvalidArgument("one probe batch per domain is required".into()));
    }
    let grads = probes
        .iter()
        .enumerate()
        .map(|(d, b)| obj.loss_grad(params, b).map(|(_, g)| g).map_err(|e| e.in_domain(d)))
        .collect::<Result<Vec<_>>>()?;
    GradientReport::from_grads(grads)
}

/// Conflict of the neural model at `params` with one minibatch per domain.
pub fn measure_conflict(
    spec: &ModelSpec,
    params: &ParamVector,
    data: &crate::data::MultiDomainDataset,
    batch_size: usize,
    batch_seed: u64,
) -> Result<GradientReport> {
    let obj = NeuralObjective::new(spec, data)?;
    let probes = probe_batches(&obj, batch_size, batch_seed)?;
    conflict_on(&obj, params, &probes)
}

#[derive(Debug, Clone)]
pub struct TaylorReport {
    /// Endpoint of the sequential pass minus the start.
    pub actual: ParamVector,
    /// `-alpha (sum_i g_i - alpha sum_i sum_{j<i} H_i g_j)` at the start.
    pub predicted: ParamVector,
    /// `|actual - predicted| / |actual|` (absolute when `actual` vanishes).
    pub residual: f64,
}

fn relative(actual: &ParamVector, predicted: &ParamVector) -> Result<f64> {
    let diff = actual.sub(predicted)?.norm();
    let scale = actual.norm();
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Second-order prediction of one sequential SGD pass (visit order as given)
/// against the actual pass.
pub fn dn_taylor_residual<L: SmoothLoss>(losses: &[L], theta0: &ParamVector, alpha: f64) -> Result<TaylorReport> {
    if losses.is_empty() {
        return Err(Error::InvalidArgument("no domains".into()));
    }
    let mut theta = theta0.clone();
    for l in losses {
        let g = l.grad(&theta)?;
        theta.axpy(-alpha, &g)?;
    }
    let actual = theta.sub(theta0)?;

    let g0: Vec<ParamVector> = losses.iter().map(|l| l.grad(theta0)).collect::<Result<_>>()?;
    let mut first = ParamVector::zeros(theta0.layout());
    let mut cross = ParamVector::zeros(theta0.layout());
    let mut earlier = ParamVector::zeros(theta0.layout());
    for (i, l) in losses.iter().enumerate() {
        if i > 0 {
            cross.axpy(1.0, &l.hvp(theta0, &earlier)?)?;
        }
        first.axpy(1.0, &g0[i])?;
        earlier.axpy(1.0, &g0[i])?;
    }
    let mut predicted = first.scale(-alpha);
    predicted.axpy(alpha * alpha, &cross)?;
    let residual = relative(&actual, &predicted)?;
    Ok(TaylorReport {
        actual,
        predicted,
        residual,
    })
}

/// Largest absolute gap between the visit-order average of the second-order
/// cross terms and `1/2 grad <g_1, g_2>`.
///
/// The cross terms are read off the two actual unit-step trajectories:
/// visiting 1 then 2 ends at `-(g_1 + g_2) + A_2 g_1`.
pub fn innergrad_expectation_check(d1: &QuadDomain, d2: &QuadDomain, theta0: &ParamVector) -> Result<f64> {
    let g1 = d1.grad(theta0)?;
    let g2 = d2.grad(theta0)?;
    let sum = g1.add(&g2)?;
    let cross = |first: &QuadDomain, second: &QuadDomain| -> Result<ParamVector> {
        let mut t = theta0.clone();
        t.axpy(-1.0, &first.grad(&t)?)?;
        t.axpy(-1.0, &second.grad(&t)?)?;
        t.sub(theta0)?.add(&sum)
    };
    let mut expected_cross = cross(d1, d2)?;
    expected_cross.axpy(1.0, &cross(d2, d1)?)?;
    let lhs = expected_cross.scale(0.5);

    let mut rhs = d1.hvp_transposed(&g2)?;
    rhs.axpy(1.0, &d2.hvp_transposed(&g1)?)?;
    let rhs = rhs.scale(0.5);
    Ok(lhs
        .values()
        .iter()
        .zip(rhs.values())
        .map(|(a, b)| math::abs(a - b))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone)]
pub struct DrReport {
    pub actual: ParamVector,
    /// `-alpha (g_j + g_i - alpha H_i g_j)` at the start.
    pub predicted: ParamVector,
    pub residual: f64,
}

/// Runs one domain-regularization update (k = 1, gamma = 1, SGD at `alpha`,
/// shared parameters zero) and compares its delta with the second-order form.
pub fn dr_identity_check(target: &QuadDomain, aux: &QuadDomain, theta0: &ParamVector, alpha: f64) -> Result<DrReport> {
    let set = QuadSet::new(vec![target.clone(), aux.clone()])?;
    let theta0 = set.vector(theta0.values().to_vec())?;
    let shared = ParamVector::zeros(set.layout());
    let cfg = TrainConfig {
        alpha,
        gamma: 1.0,
        k: 1,
        ..TrainConfig::default()
    };
    let mut r = rng::for_purpose(0, rng::purpose::PROBE);
    let step = dr_update(&shared, &theta0, &OptState::sgd(alpha), 0, &set, &cfg, &mut r)?;
    let actual = step.params.sub(&theta0)?;

    let gi = target.grad(&theta0)?;
    let gj = aux.grad(&theta0)?;
    let mut predicted = gj.add(&gi)?.scale(-alpha);
    predicted.axpy(alpha * alpha, &target.hvp(&gj)?)?;
    let residual = relative(&actual, &predicted)?;
    Ok(DrReport {
        actual,
        predicted,
        residual,
    })
}

/// Gradient geometry after one epoch.
#[derive(Debug, Clone)]
pub struct EpochConflict {
    pub epoch: u64,
    pub report: GradientReport,
}

/// Trains `cfg.epochs` epochs of `cfg.strategy` and measures the shared
/// parameters' per-domain gradients on fixed probe batches after every epoch.
pub fn track_inner_products(
    state: &MdrState,
    obj: &NeuralObjective<'_>,
    cfg: &TrainConfig,
    probe_batch_size: usize,
) -> Result<(MdrState, Vec<EpochConflict>)> {
    let probes = probe_batches(obj, probe_batch_size, cfg.seed)?;
    let mut series = Vec::with_capacity(cfg.epochs);
    let mut current = state.clone();
    for _ in 0..cfg.epochs {
        current = strategy::run_epoch(&current, obj, cfg)?.state;
        series.push(EpochConflict {
            epoch: current.epoch,
            report: conflict_on(obj, &current.shared, &probes)?,
        });
    }
    Ok((current, series))
}
