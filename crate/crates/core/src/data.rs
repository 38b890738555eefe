//! Multi-domain interaction data: domains, splits and CTR-ratio bookkeeping.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl core::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Dataset(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub clicked: bool,
}

impl Interaction {
    pub fn new(user: usize, item: usize, clicked: bool) -> Self {
        Self { user, item, clicked }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainData {
    pub domain_id: usize,
    interactions: Vec<Interaction>,
    splits: Vec<Split>,
}

impl DomainData {
    /// A domain whose interactions all sit in the training split.
    pub fn new(domain_id: usize, interactions: Vec<Interaction>) -> Self {
        let splits = alloc::vec![Split::Train; interactions.len()];
        Self {
            domain_id,
            interactions,
            splits,
        }
    }

    pub fn with_splits(domain_id: usize, interactions: Vec<Interaction>, splits: Vec<Split>) -> Result<Self> {
        if interactions.len() != splits.len() {
            return Err(Error::Dataset("one split tag per interaction is required".into()));
        }
        Ok(Self {
            domain_id,
            interactions,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn n_pos(&self) -> usize {
        self.interactions.iter().filter(|x| x.clicked).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    /// Row indices belonging to `split`, in storage order.
    pub fn rows(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn batch(&self, rows: &[usize]) -> Result<Batch> {
        let mut users = Vec::with_capacity(rows.len());
        let mut items = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            let x = self.interactions.get(r).ok_or(Error::IndexOutOfRange {
                what: "row",
                index: r,
                bound: self.len(),
            })?;
            users.push(x.user);
            items.push(x.item);
            labels.push(if x.clicked { 1.0 } else { 0.0 });
        }
        Batch::new(users, items, labels)
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> DomainData {
        DomainData {
            domain_id: self.domain_id,
            interactions: rows.iter().map(|&r| self.interactions[r]).collect(),
            splits: rows.iter().map(|&r| self.splits[r]).collect(),
        }
    }
}

/// `#positives / #negatives`.
pub fn ctr_ratio(domain: &DomainData) -> Result<f64> {
    ratio_from_counts(domain.n_pos(), domain.n_neg())
}

pub fn ratio_from_counts(n_pos: usize, n_neg: usize) -> Result<f64> {
    if n_neg == 0 {
        return Err(Error::Dataset("CTR ratio undefined without negatives".into()));
    }
    Ok(n_pos as f64 / n_neg as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiDomainDataset {
    domains: Vec<DomainData>,
    pub num_users: usize,
    pub num_items: usize,
}

impl MultiDomainDataset {
    pub fn new(domains: Vec<DomainData>, num_users: usize, num_items: usize) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::Dataset("dataset has no domains".into()));
        }
        for (i, d) in domains.iter().enumerate() {
            if d.domain_id != i {
                return Err(Error::Dataset(format!(
                    "domain ids must be dense 0..n-1; position {i} holds {}",
                    d.domain_id
                )));
            }
            for x in &d.interactions {
                if x.user >= num_users {
                    return Err(Error::IndexOutOfRange {
                        what: "user",
                        index: x.user,
                        bound: num_users,
                    });
                }
                if x.item >= num_items {
                    return Err(Error::IndexOutOfRange {
                        what: "item",
                        index: x.item,
                        bound: num_items,
                    });
                }
            }
        }
        Ok(Self {
            domains,
            num_users,
            num_items,
        })
    }

    pub fn domains(&self) -> &[DomainData] {
        &self.domains
    }

    pub fn domain(&self, id: usize) -> Option<&DomainData> {
        self.domains.get(id)
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn total_rows(&self) -> usize {
        self.domains.iter().map(DomainData::len).sum()
    }

    /// Keeps domains listed in `ids`, renumbered densely in that order.
    pub fn subset(&self, ids: &[usize]) -> Result<MultiDomainDataset> {
        let mut domains = Vec::with_capacity(ids.len());
        for (new_id, &id) in ids.iter().enumerate() {
            let mut d = self
                .domains
                .get(id)
                .ok_or(Error::IndexOutOfRange {
                    what: "domain",
                    index: id,
                    bound: self.domains.len(),
                })?
                .clone();
            d.domain_id = new_id;
            domains.push(d);
        }
        MultiDomainDataset::new(domains, self.num_users, self.num_items)
    }

    pub(crate) fn with_domains(&self, domains: Vec<DomainData>) -> MultiDomainDataset {
        MultiDomainDataset {
            domains,
            num_users: self.num_users,
            num_items: self.num_items,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        Self { train, val, test }
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self::new(0.8, 0.1, 0.1)
    }
}

fn round_half_up(x: f64) -> usize {
    libm::floor(x + 0.5) as usize
}

/// Per-domain random split, stratified by label.
pub fn split(dataset: &MultiDomainDataset, fractions: SplitFractions, seed: u64) -> Result<MultiDomainDataset> {
    let SplitFractions { train, val, test } = fractions;
    if [train, val, test].iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
        return Err(Error::InvalidArgument("split fractions must be non-negative".into()));
    }
    if libm::fabs(train + val + test - 1.0) > 1e-9 {
        return Err(Error::InvalidArgument("split fractions must sum to 1".into()));
    }
    let mut domains = Vec::with_capacity(dataset.num_domains());
    for d in dataset.domains() {
        if d.len() < 3 {
            return Err(Error::Dataset(format!(
                "domain {} has {} samples; at least 3 are needed to split",
                d.domain_id,
                d.len()
            )));
        }
        let mut r = rng::for_purpose(seed, rng::purpose::SPLIT ^ ((d.domain_id as u64) << 8));
        let mut splits = alloc::vec![Split::Test; d.len()];
        for class in [true, false] {
            let mut idx: Vec<usize> = (0..d.len()).filter(|&i| d.interactions[i].clicked == class).collect();
            idx.shuffle(&mut r);
            let n = idx.len();
            let n_train = round_half_up(train * n as f64).min(n);
            let n_val = round_half_up(val * n as f64).min(n - n_train);
            for (pos, &i) in idx.iter().enumerate() {
                splits[i] = if pos < n_train {
                    Split::Train
                } else if pos < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                };
            }
        }
        domains.push(DomainData {
            domain_id: d.domain_id,
            interactions: d.interactions.clone(),
            splits,
        });
    }
    Ok(dataset.with_domains(domains))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn domain(id: usize, pos: usize, neg: usize) -> DomainData {
        let mut xs = Vec::new();
        for i in 0..pos {
            xs.push(Interaction::new(i % 7, i % 5, true));
        }
        for i in 0..neg {
            xs.push(Interaction::new(i % 7, (i + 2) % 5, false));
        }
        DomainData::new(id, xs)
    }

    #[test]
    fn ctr_ratio_examples() {
        assert_eq!(ctr_ratio(&domain(0, 20, 100)).unwrap(), 0.2);
        assert_eq!(ctr_ratio(&domain(0, 0, 5)).unwrap(), 0.0);
        assert!(ctr_ratio(&domain(0, 4, 0)).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(MultiDomainDataset::new(vec![], 7, 5).is_err());
        assert!(MultiDomainDataset::new(vec![domain(1, 2, 2)], 7, 5).is_err());
        assert!(matches!(
            MultiDomainDataset::new(vec![domain(0, 2, 2)], 1, 5),
            Err(Error::IndexOutOfRange { what: "user", .. })
        ));
    }

    #[test]
    fn degenerate_split_puts_everything_in_train() {
        let ds = MultiDomainDataset::new(vec![domain(0, 10, 30)], 7, 5).unwrap();
        let s = split(&ds, SplitFractions::new(1.0, 0.0, 0.0), 3).unwrap();
        assert_eq!(s.domains()[0].rows(Split::Train).len(), 40);
    }

    #[test]
    fn split_is_a_partition_and_deterministic() {
        let ds = MultiDomainDataset::new(vec![domain(0, 30, 70), domain(1, 9, 40)], 7, 5).unwrap();
        let a = split(&ds, SplitFractions::default(), 11).unwrap();
        let b = split(&ds, SplitFractions::default(), 11).unwrap();
        assert_eq!(a, b);
        for (orig, d) in ds.domains().iter().zip(a.domains()) {
            assert_eq!(orig.interactions(), d.interactions());
            let total: usize = [Split::Train, Split::Val, Split::Test].iter().map(|&s| d.rows(s).len()).sum();
            assert_eq!(total, d.len());
        }
    }

    #[test]
    fn stratified_split_preserves_label_ratio() {
        let ds = MultiDomainDataset::new(vec![domain(0, 300, 900)], 7, 5).unwrap();
        let s = split(&ds, SplitFractions::default(), 5).unwrap();
        let d = &s.domains()[0];
        let train = d.rows(Split::Train);
        let pos = train.iter().filter(|&&r| d.interactions()[r].clicked).count() as f64;
        let overall = 300.0 / 1200.0;
        let frac = pos / train.len() as f64;
        assert!((frac - overall).abs() <= 0.05 * overall);
    }

    #[test]
    fn split_rejects_tiny_domains_and_bad_fractions() {
        let ds = MultiDomainDataset::new(vec![domain(0, 1, 1)], 7, 5).unwrap();
        assert!(split(&ds, SplitFractions::default(), 0).is_err());
        let ds = MultiDomainDataset::new(vec![domain(0, 5, 5)], 7, 5).unwrap();
        assert!(split(&ds, SplitFractions::new(0.5, 0.2, 0.2), 0).is_err());
        assert!(split(&ds, SplitFractions::new(1.2, -0.2, 0.0), 0).is_err());
    }
}
