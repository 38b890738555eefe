//! Synthetic multi-domain click data with a controllable amount of conflict.
//!
//! Every user and item gets a latent vector. Domain `d` scores a pair with
//! `sigmoid(x_u' M_d z_v)` where
//! `M_d = (1 - conflict) * M_shared + conflict * M_private_d`, so
//! `conflict_strength = 0` makes every domain agree and `1` makes them
//! independent. Each user's top-scoring items in a domain become positives;
//! negatives are drawn uniformly from pairs that are not positives until the
//! domain's CTR ratio, itself drawn from `ctr_ratio_range`, is met.

use alloc::format;
use alloc::vec::Vec;

use rand::distr::Distribution;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{DomainData, Interaction, MultiDomainDataset};
use crate::error::{Error, Result};
use crate::math;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeSampling {
    /// Each user's negatives come from that user's unlabeled items.
    PerUser,
    /// Negatives are drawn from all unlabeled pairs of the domain at once.
    Global,
}

impl NegativeSampling {
    pub fn as_str(self) -> &'static str {
        match self {
            NegativeSampling::PerUser => "per-user",
            NegativeSampling::Global => "global",
        }
    }
}

impl core::str::FromStr for NegativeSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-user" | "per_user" => Ok(NegativeSampling::PerUser),
            "global" => Ok(NegativeSampling::Global),
            other => Err(Error::InvalidConfig(format!("unknown negative sampling {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_domains: usize,
    pub users_per_domain: usize,
    pub items_per_domain: usize,
    pub overlap_fraction: f64,
    pub conflict_strength: f64,
    pub ctr_ratio_range: (f64, f64),
    pub latent_dim: usize,
    pub positives_per_user: usize,
    pub negative_sampling: NegativeSampling,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_domains: 6,
            users_per_domain: 400,
            items_per_domain: 200,
            overlap_fraction: 0.5,
            conflict_strength: 0.5,
            ctr_ratio_range: (0.2, 0.5),
            latent_dim: 8,
            positives_per_user: 6,
            negative_sampling: NegativeSampling::PerUser,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// The bundled six-domain benchmark: strongly conflicting domains, about 60k rows.
    pub fn conflict6(seed: u64) -> Self {
        Self {
            conflict_strength: 0.8,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.ctr_ratio_range;
        if self.n_domains == 0 {
            return Err(Error::InvalidConfig("n_domains must be >= 1".into()));
        }
        if self.users_per_domain == 0 || self.items_per_domain == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidConfig("users, items and latent_dim must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap_fraction) || !(0.0..=1.0).contains(&self.conflict_strength) {
            return Err(Error::InvalidConfig(
                "overlap_fraction and conflict_strength must lie in [0, 1]".into(),
            ));
        }
        if !(lo > 0.0) || !(lo <= hi) || !hi.is_finite() {
            return Err(Error::InvalidConfig(format!("bad ctr_ratio_range ({lo}, {hi})")));
        }
        if self.positives_per_user == 0 {
            return Err(Error::InvalidConfig("positives_per_user must be >= 1".into()));
        }
        if self.positives_per_user >= self.items_per_domain {
            return Err(Error::Infeasible(format!(
                "{} positives per user leave no negatives among {} items",
                self.positives_per_user, self.items_per_domain
            )));
        }
        Ok(())
    }

    fn shared_count(&self, per_domain: usize) -> usize {
        libm::floor(self.overlap_fraction * per_domain as f64 + 0.5) as usize
    }

    pub fn num_users(&self) -> usize {
        let shared = self.shared_count(self.users_per_domain);
        shared + self.n_domains * (self.users_per_domain - shared)
    }

    pub fn num_items(&self) -> usize {
        let shared = self.shared_count(self.items_per_domain);
        shared + self.n_domains * (self.items_per_domain - shared)
    }

    /// Global ids of the entities visible in `domain`.
    fn members(&self, domain: usize, per_domain: usize) -> Vec<usize> {
        let shared = self.shared_count(per_domain);
        let private = per_domain - shared;
        (0..shared)
            .chain(shared + domain * private..shared + (domain + 1) * private)
            .collect()
    }
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            x * scale
        })
        .collect()
}

/// Negative count closest to `n_pos / target` whose ratio stays inside `[lo, hi]`.
fn negative_count(n_pos: usize, target: f64, lo: f64, hi: f64) -> Result<usize> {
    let min_neg = libm::ceil(n_pos as f64 / hi) as usize;
    let max_neg = libm::floor(n_pos as f64 / lo) as usize;
    let min_neg = min_neg.max(1);
    if min_neg > max_neg {
        return Err(Error::Infeasible(format!(
            "no negative count puts {n_pos} positives inside the CTR range [{lo}, {hi}]"
        )));
    }
    let ideal = libm::floor(n_pos as f64 / target + 0.5) as usize;
    Ok(ideal.clamp(min_neg, max_neg))
}

pub fn generate(spec: &SyntheticSpec) -> Result<MultiDomainDataset> {
    spec.validate()?;
    let mut r = rng::for_purpose(spec.seed, rng::purpose::GENERATE);
    let dim = spec.latent_dim;
    let scale = 1.0 / math::sqrt(dim as f64);

    let user_vecs: Vec<Vec<f64>> = (0..spec.num_users()).map(|_| normal_vec(&mut r, dim, 1.0)).collect();
    let item_vecs: Vec<Vec<f64>> = (0..spec.num_items()).map(|_| normal_vec(&mut r, dim, 1.0)).collect();
    let shared_map = normal_vec(&mut r, dim * dim, scale);

    let (lo, hi) = spec.ctr_ratio_range;
    let q = spec.positives_per_user;
    let mut domains = Vec::with_capacity(spec.n_domains);
    for d in 0..spec.n_domains {
        let private_map = normal_vec(&mut r, dim * dim, scale);
        let c = spec.conflict_strength;
        let map: Vec<f64> = shared_map
            .iter()
            .zip(&private_map)
            .map(|(s, p)| (1.0 - c) * s + c * p)
            .collect();
        let target = if hi > lo { r.random_range(lo..=hi) } else { lo };

        let users = spec.members(d, spec.users_per_domain);
        let items = spec.members(d, spec.items_per_domain);
        // z'_v = M_d z_v, so a pair scores x_u . z'_v
        let projected: Vec<Vec<f64>> = items
            .iter()
            .map(|&v| {
                (0..dim)
                    .map(|i| (0..dim).map(|j| map[i * dim + j] * item_vecs[v][j]).sum())
                    .collect()
            })
            .collect();

        // per user: (positives, remaining candidates)
        let mut positives: Vec<Vec<usize>> = Vec::with_capacity(users.len());
        let mut unlabeled: Vec<Vec<usize>> = Vec::with_capacity(users.len());
        for &u in &users {
            let mut scored: Vec<(f64, usize)> = projected
                .iter()
                .enumerate()
                .map(|(k, z)| {
                    let s: f64 = user_vecs[u].iter().zip(z).map(|(a, b)| a * b).sum();
                    (math::sigmoid(s), k)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut top: Vec<usize> = scored[..q].iter().map(|&(_, k)| items[k]).collect();
            let mut rest: Vec<usize> = scored[q..].iter().map(|&(_, k)| items[k]).collect();
            top.sort_unstable();
            rest.sort_unstable();
            positives.push(top);
            unlabeled.push(rest);
        }

        let n_pos = users.len() * q;
        let n_neg = negative_count(n_pos, target, lo, hi)?;
        let negatives = match spec.negative_sampling {
            NegativeSampling::PerUser => {
                let base = n_neg / users.len();
                let extra = n_neg % users.len();
                if base + usize::from(extra > 0) > spec.items_per_domain - q {
                    return Err(Error::Infeasible(format!(
                        "domain {d} needs {} negatives per user but only {} items are unlabeled",
                        base + 1,
                        spec.items_per_domain - q
                    )));
                }
                let mut order: Vec<usize> = (0..users.len()).collect();
                order.shuffle(&mut r);
                let mut quota = alloc::vec![base; users.len()];
                for &k in &order[..extra] {
                    quota[k] += 1;
                }
                unlabeled
                    .iter()
                    .zip(&quota)
                    .map(|(cands, &m)| {
                        let mut picked: Vec<usize> =
                            index::sample(&mut r, cands.len(), m).into_iter().map(|i| cands[i]).collect();
                        picked.sort_unstable();
                        picked
                    })
                    .collect::<Vec<_>>()
            }
            NegativeSampling::Global => {
                let per_user = spec.items_per_domain - q;
                let total = users.len() * per_user;
                if n_neg > total {
                    return Err(Error::Infeasible(format!(
                        "domain {d} needs {n_neg} negatives but only {total} pairs are unlabeled"
                    )));
                }
                let mut picked = index::sample(&mut r, total, n_neg).into_vec();
                picked.sort_unstable();
                let mut out = alloc::vec![Vec::new(); users.len()];
                for flat in picked {
                    out[flat / per_user].push(unlabeled[flat / per_user][flat % per_user]);
                }
                out
            }
        };

        let mut rows = Vec::with_capacity(n_pos + n_neg);
        for (k, &u) in users.iter().enumerate() {
            rows.extend(positives[k].iter().map(|&v| Interaction::new(u, v, true)));
            rows.extend(negatives[k].iter().map(|&v| Interaction::new(u, v, false)));
        }
        domains.push(DomainData::new(d, rows));
    }
    MultiDomainDataset::new(domains, spec.num_users(), spec.num_items())
}
