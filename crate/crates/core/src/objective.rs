//! Per-domain loss oracles that the training strategies are written against.
//!
//! A strategy never touches a dataset directly: it asks an [`Objective`] for
//! a minibatch of some domain and for the loss and gradient of that batch at
//! some parameters. The neural CTR model over a [`MultiDomainDataset`] is one
//! implementation; the quadratic test problems in
//! [`crate::diagnostics`] are another, which is what lets the analytic
//! oracles run through the exact same strategy code.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::{index, SliceRandom};
use rand::RngCore;

use crate::data::{MultiDomainDataset, Split};
use crate::error::{Error, Result};
use crate::model::{self, Batch, ModelSpec};
use crate::param::{Layout, ParamVector};

pub trait Objective {
    type Batch: Clone;

    fn num_domains(&self) -> usize;

    fn layout(&self) -> &Arc<Layout>;

    /// Number of training rows of `domain`; zero means the domain is absent.
    fn train_rows(&self, domain: usize) -> usize;

    /// A minibatch of at most `batch_size` training rows of `domain`.
    fn draw_batch(&self, domain: usize, batch_size: usize, rng: &mut dyn RngCore) -> Result<Self::Batch>;

    fn loss_grad(&self, params: &ParamVector, batch: &Self::Batch) -> Result<(f64, ParamVector)>;
}

/// Objectives whose domains can be pooled into one undifferentiated stream.
pub trait PooledObjective: Objective {
    /// Shuffled minibatches covering each training row of every domain once.
    fn pooled_epoch(&self, batch_size: usize, rng: &mut dyn RngCore) -> Result<Vec<Self::Batch>>;

    /// Shuffled minibatches covering each training row of one domain once.
    fn domain_epoch(&self, domain: usize, batch_size: usize, rng: &mut dyn RngCore) -> Result<Vec<Self::Batch>>;
}

/// Minibatch of the neural objective; rows remember their domain.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedBatch {
    pub batch: Batch,
    pub domains: Vec<usize>,
}

/// The embedding + MLP model trained on the training split of a dataset.
pub struct NeuralObjective<'a> {
    spec: &'a ModelSpec,
    data: &'a MultiDomainDataset,
    layout: Arc<Layout>,
    train: Vec<Vec<usize>>,
}

impl<'a> NeuralObjective<'a> {
    pub fn new(spec: &'a ModelSpec, data: &'a MultiDomainDataset) -> Result<Self> {
        spec.validate()?;
        if data.num_users > spec.num_users || data.num_items > spec.num_items {
            return Err(Error::InvalidSpec("model tables are smaller than the dataset id space".into()));
        }
        let train = data.domains().iter().map(|d| d.rows(Split::Train)).collect();
        Ok(Self {
            spec,
            data,
            layout: spec.layout(),
            train,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    pub fn data(&self) -> &MultiDomainDataset {
        self.data
    }

    fn tagged(&self, rows: &[(usize, usize)]) -> Result<TaggedBatch> {
        let mut users = Vec::with_capacity(rows.len());
        let mut items = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        let mut domains = Vec::with_capacity(rows.len());
        for &(d, r) in rows {
            let x = self.data.domains()[d].interactions()[r];
            users.push(x.user);
            items.push(x.item);
            labels.push(if x.clicked { 1.0 } else { 0.0 });
            domains.push(d);
        }
        Ok(TaggedBatch {
            batch: Batch::new(users, items, labels)?,
            domains,
        })
    }

    fn check_domain(&self, domain: usize) -> Result<()> {
        if domain >= self.train.len() {
            return Err(Error::IndexOutOfRange {
                what: "domain",
                index: domain,
                bound: self.train.len(),
            });
        }
        Ok(())
    }
}

impl Objective for NeuralObjective<'_> {
    type Batch = TaggedBatch;

    fn num_domains(&self) -> usize {
        self.train.len()
    }

    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn train_rows(&self, domain: usize) -> usize {
        self.train.get(domain).map_or(0, Vec::len)
    }

    fn draw_batch(&self, domain: usize, batch_size: usize, rng: &mut dyn RngCore) -> Result<TaggedBatch> {
        self.check_domain(domain)?;
        let rows = &self.train[domain];
        if rows.is_empty() || batch_size == 0 {
            return Err(Error::EmptyBatch);
        }
        let picked: Vec<(usize, usize)> = if batch_size >= rows.len() {
            rows.iter().map(|&r| (domain, r)).collect()
        } else {
            index::sample(rng, rows.len(), batch_size)
                .into_iter()
                .map(|i| (domain, rows[i]))
                .collect()
        };
        self.tagged(&picked)
    }

    fn loss_grad(&self, params: &ParamVector, batch: &TaggedBatch) -> Result<(f64, ParamVector)> {
        model::loss_and_grad(self.spec, params, &batch.batch)
    }
}

impl PooledObjective for NeuralObjective<'_> {
    fn pooled_epoch(&self, batch_size: usize, rng: &mut dyn RngCore) -> Result<Vec<TaggedBatch>> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        let mut all: Vec<(usize, usize)> = self
            .train
            .iter()
            .enumerate()
            .flat_map(|(d, rows)| rows.iter().map(move |&r| (d, r)))
            .collect();
        all.shuffle(rng);
        all.chunks(batch_size).map(|c| self.tagged(c)).collect()
    }

    fn domain_epoch(&self, domain: usize, batch_size: usize, rng: &mut dyn RngCore) -> Result<Vec<TaggedBatch>> {
        self.check_domain(domain)?;
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        let mut rows: Vec<(usize, usize)> = self.train[domain].iter().map(|&r| (domain, r)).collect();
        rows.shuffle(rng);
        rows.chunks(batch_size).map(|c| self.tagged(c)).collect()
    }
}

/// Wraps an objective and counts gradient evaluations.
pub struct Counting<'a, O> {
    inner: &'a O,
    grads: AtomicUsize,
}

impl<'a, O> Counting<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self {
            inner,
            grads: AtomicUsize::new(0),
        }
    }

    pub fn gradient_evaluations(&self) -> usize {
        self.grads.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.grads.store(0, Ordering::Relaxed);
    }
}

impl<O: Objective> Objective for Counting<'_, O> {
    type Batch = O::Batch;

    fn num_domains(&self) -> usize {
        self.inner.num_domains()
    }

    fn layout(&self) -> &Arc<Layout> {
        self.inner.layout()
    }

    fn train_rows(&self, domain: usize) -> usize {
        self.inner.train_rows(domain)
    }

    fn draw_batch(&self, domain: usize, batch_size: usize, rng: &mut dyn RngCore) -> Result<Self::Batch> {
        self.inner.draw_batch(domain, batch_size, rng)
    }

    fn loss_grad(&self, params: &ParamVector, batch: &Self::Batch) -> Result<(f64, ParamVector)> {
        self.grads.fetch_add(1, Ordering::Relaxed);
        self.inner.loss_grad(params, batch)
    }
}
