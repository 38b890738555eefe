//! Flat parameter storage.
//!
//! A [`ParamVector`] is one contiguous `f64` buffer plus a shared [`Layout`]
//! naming the blocks (embedding tables, weight matrices, biases) inside it.
//! Shared parameters, domain-specific parameters, inner-loop iterates,
//! gradients and optimizer moments are all `ParamVector`s, so every strategy
//! is written as plain vector arithmetic.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Embedding,
    Weight,
    Bias,
    /// Anything without model structure (quadratic test problems).
    Flat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    blocks: Vec<Block>,
    len: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// A single unnamed block of `len` values.
    pub fn flat(len: usize) -> Arc<Layout> {
        let mut layout = Layout::new();
        layout.push("theta", BlockKind::Flat, 1, len);
        Arc::new(layout)
    }

    pub fn push(&mut self, name: &str, kind: BlockKind, rows: usize, cols: usize) -> &Block {
        let block = Block {
            name: name.into(),
            kind,
            offset: self.len,
            rows,
            cols,
        };
        self.len += block.len();
        self.blocks.push(block);
        self.blocks.last().expect("just pushed")
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn zeros(layout: &Arc<Layout>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout: Arc::clone(layout),
        }
    }

    pub fn from_values(layout: &Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LayoutMismatch);
        }
        Ok(Self {
            values,
            layout: Arc::clone(layout),
        })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.block(name).map(|b| &self.values[b.range()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.block(name)?.range();
        Some(&mut self.values[range])
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch)
        }
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> ParamVector {
        ParamVector {
            values: self.values.iter().map(|v| v * factor).collect(),
            layout: Arc::clone(&self.layout),
        }
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &ParamVector) -> Result<()> {
        self.check_layout(x)?;
        for (s, xv) in self.values.iter_mut().zip(&x.values) {
            *s += a * xv;
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.values.iter().map(|v| v * v).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Exact equality of layout and of every value's bit pattern.
    pub fn bit_eq(&self, other: &ParamVector) -> bool {
        self.same_layout(other)
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn zip_with(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<ParamVector> {
        self.check_layout(other)?;
        Ok(ParamVector {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            layout: Arc::clone(&self.layout),
        })
    }
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.same_layout(other) && self.values == other.values
    }
}

/// Per-domain inference parameters: elementwise `shared + specific`.
pub fn combine(shared: &ParamVector, specific: &ParamVector) -> Result<ParamVector> {
    shared.add(specific)
}

/// Elementwise mean of equally laid out vectors, accumulated in slice order.
pub fn mean(vectors: &[&ParamVector]) -> Result<ParamVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("mean of zero vectors".into()))?;
    let mut acc = (*first).clone();
    for v in &vectors[1..] {
        acc.axpy(1.0, v)?;
    }
    let m = vectors.len() as f64;
    for a in acc.values_mut() {
        *a /= m;
    }
    Ok(acc)
}
