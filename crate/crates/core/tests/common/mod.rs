#![allow(dead_code)]

use mdopt_core::data::{split, MultiDomainDataset, SplitFractions};
use mdopt_core::diagnostics::QuadDomain;
use mdopt_core::rng;
use mdopt_core::synth::{generate, SyntheticSpec};

/// Dense row-major `A x`.
pub fn matvec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum()).collect()
}

pub fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

pub fn add(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a + b).collect()
}

pub fn scale(x: &[f64], s: f64) -> Vec<f64> {
    x.iter().map(|a| a * s).collect()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn rel_err(actual: &[f64], expected: &[f64]) -> f64 {
    norm(&sub(actual, expected)) / norm(expected).max(f64::MIN_POSITIVE)
}

/// Gradient `A (theta - c)` straight from the matrix entries.
pub fn quad_grad(d: &QuadDomain, theta: &[f64]) -> Vec<f64> {
    matvec(d.hessian(), &sub(theta, d.center()))
}

pub fn random_quads(n: usize, dim: usize, seed: u64) -> Vec<QuadDomain> {
    let mut r = rng::for_purpose(seed, 99);
    (0..n).map(|_| QuadDomain::random(dim, 0.5, 2.0, &mut r).unwrap()).collect()
}

pub fn start_point(dim: usize, seed: u64) -> Vec<f64> {
    (0..dim).map(|i| ((i as f64 + 1.0) * (seed as f64 + 0.7)).sin()).collect()
}

/// A small split synthetic dataset with `n` domains.
pub fn small_data(n: usize, seed: u64) -> MultiDomainDataset {
    let spec = SyntheticSpec {
        n_domains: n,
        users_per_domain: 40,
        items_per_domain: 30,
        positives_per_user: 3,
        seed,
        ..SyntheticSpec::default()
    };
    split(&generate(&spec).unwrap(), SplitFractions::default(), seed).unwrap()
}
