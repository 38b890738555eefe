//! Multi-domain CTR training core.
//!
//! The crate trains one embedding + MLP click model across several domains
//! whose gradients may conflict. Shared parameters are updated by domain
//! negotiation (sequential per-domain inner loop followed by an outer
//! interpolation step), and additive per-domain parameters by domain
//! regularization. Classical multi-domain baselines, gradient-conflict
//! diagnostics, a synthetic dataset generator and a simulated
//! parameter-server trainer are built on the same primitives.
//!
//! Everything here is `no_std` + `alloc`; file formats, the CLI and thread
//! pools live in the `mdopt` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
mod math;
pub mod model;
pub mod objective;
pub mod optim;
pub mod param;
pub mod ps;
pub mod rng;
pub mod strategy;
pub mod synth;

pub use error::{Error, Result};
pub use param::{combine, Layout, ParamVector};
