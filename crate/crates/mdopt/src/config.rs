//! Flat `key = value` experiment configuration with dotted sections.
//!
//! ```text
//! # bundled benchmark with a different strategy
//! synthetic.preset = conflict6
//! model.hidden = 64,32
//! train.strategy = joint
//! run.seeds = 0,1,2
//! ```
//!
//! Unspecified keys keep the defaults of [`ExperimentConfig::default`], which
//! is the bundled six-domain benchmark. [`ExperimentConfig::to_text`] renders
//! every key, so its output alone reproduces a run.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use mdopt_core::data::SplitFractions;
use mdopt_core::model::{Activation, ModelSpec};
use mdopt_core::optim::OptimizerKind;
use mdopt_core::strategy::{Strategy, TrainConfig};
use mdopt_core::synth::{NegativeSampling, SyntheticSpec};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// A dataset CSV carrying its own split column.
    File(PathBuf),
    /// Generated, then split with `split.*`.
    Synthetic(SyntheticSpec),
}

/// Hyperparameter grid of a sweep; an empty axis keeps the configured value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub k: Vec<usize>,
}

impl SweepGrid {
    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty() && self.beta.is_empty() && self.gamma.is_empty() && self.k.is_empty()
    }

    /// Sets one axis from `name` and a comma-separated list.
    pub fn set_axis(&mut self, name: &str, values: &str) -> Result<()> {
        match name {
            "alpha" => self.alpha = parse_list(name, values)?,
            "beta" => self.beta = parse_list(name, values)?,
            "gamma" => self.gamma = parse_list(name, values)?,
            "k" => self.k = parse_list(name, values)?,
            other => return Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
        Ok(())
    }

    /// Parses `alpha=1e-1,1e-3;beta=0.1,0.5`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut grid = SweepGrid::default();
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, values) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("grid entry {part:?} is not axis=values")))?;
            grid.set_axis(name.trim(), values)?;
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub split: SplitFractions,
    pub split_seed: u64,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
    /// Seeds of repeated runs; `train.seed` is replaced by each in turn.
    pub seeds: Vec<u64>,
    pub probe_batch_size: usize,
    pub sweep: SweepGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic(SyntheticSpec::conflict6(0)),
            split: SplitFractions::default(),
            split_seed: 0,
            embed_dim: 16,
            hidden: vec![64, 32],
            activation: Activation::Relu,
            train: TrainConfig {
                alpha: 1e-3,
                beta: 0.1,
                gamma: 0.5,
                k: 5,
                epochs: 10,
                batch_size: 256,
                inner_steps_per_domain: 30,
                optimizer: OptimizerKind::Adam,
                ..TrainConfig::default()
            },
            seeds: vec![0],
            probe_batch_size: 2048,
            sweep: SweepGrid::default(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|v| parse_value(key, v))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Defaults overridden by the keys of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        let (mut file_source, mut synthetic_keys) = (false, false);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i as u64 + 1,
                message: format!("expected key = value, found {line:?}"),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse {
                    line: i as u64 + 1,
                    message: format!("duplicate key {key}"),
                });
            }
            file_source |= key == "data.path";
            synthetic_keys |= key.starts_with("synthetic.");
            cfg.set(key, value.trim()).map_err(|e| Error::Parse {
                line: i as u64 + 1,
                message: e.to_string(),
            })?;
        }
        if file_source && synthetic_keys {
            return Err(Error::Config("data.path and synthetic.* are mutually exclusive".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn synthetic(&mut self) -> Result<&mut SyntheticSpec> {
        if let DataSource::File(_) = self.data {
            self.data = DataSource::Synthetic(SyntheticSpec::conflict6(0));
        }
        match &mut self.data {
            DataSource::Synthetic(s) => Ok(s),
            DataSource::File(_) => unreachable!(),
        }
    }

    /// Sets one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "data.path" => self.data = DataSource::File(PathBuf::from(value)),
            "synthetic.preset" => {
                let seed = match &self.data {
                    DataSource::Synthetic(s) => s.seed,
                    DataSource::File(_) => 0,
                };
                self.data = DataSource::Synthetic(match value {
                    "conflict6" => SyntheticSpec::conflict6(seed),
                    "default" => SyntheticSpec {
                        seed,
                        ..SyntheticSpec::default()
                    },
                    other => return Err(Error::Config(format!("unknown synthetic preset {other:?}"))),
                });
            }
            k if k.starts_with("synthetic.") => {
                let s = self.synthetic()?;
                match &k["synthetic.".len()..] {
                    "n_domains" => s.n_domains = parse_value(k, value)?,
                    "users_per_domain" => s.users_per_domain = parse_value(k, value)?,
                    "items_per_domain" => s.items_per_domain = parse_value(k, value)?,
                    "overlap_fraction" => s.overlap_fraction = parse_value(k, value)?,
                    "conflict_strength" => s.conflict_strength = parse_value(k, value)?,
                    "ctr_ratio_lo" => s.ctr_ratio_range.0 = parse_value(k, value)?,
                    "ctr_ratio_hi" => s.ctr_ratio_range.1 = parse_value(k, value)?,
                    "latent_dim" => s.latent_dim = parse_value(k, value)?,
                    "positives_per_user" => s.positives_per_user = parse_value(k, value)?,
                    "negative_sampling" => s.negative_sampling = value.parse::<NegativeSampling>()?,
                    "seed" => s.seed = parse_value(k, value)?,
                    _ => return Err(Error::Config(format!("unknown key {k}"))),
                }
            }
            "split.train" => self.split.train = parse_value(key, value)?,
            "split.val" => self.split.val = parse_value(key, value)?,
            "split.test" => self.split.test = parse_value(key, value)?,
            "split.seed" => self.split_seed = parse_value(key, value)?,
            "model.embed_dim" => self.embed_dim = parse_value(key, value)?,
            "model.hidden" => self.hidden = parse_list(key, value)?,
            "model.activation" => self.activation = value.parse()?,
            "train.strategy" => t.strategy = value.parse::<Strategy>()?,
            "train.alpha" => t.alpha = parse_value(key, value)?,
            "train.beta" => t.beta = parse_value(key, value)?,
            "train.gamma" => t.gamma = parse_value(key, value)?,
            "train.k" => t.k = parse_value(key, value)?,
            "train.epochs" => t.epochs = parse_value(key, value)?,
            "train.batch_size" => t.batch_size = parse_value(key, value)?,
            "train.inner_steps_per_domain" => t.inner_steps_per_domain = parse_value(key, value)?,
            "train.optimizer" => t.optimizer = value.parse::<OptimizerKind>()?,
            "train.adam_beta1" => t.adam.beta1 = parse_value(key, value)?,
            "train.adam_beta2" => t.adam.beta2 = parse_value(key, value)?,
            "train.adam_eps" => t.adam.eps = parse_value(key, value)?,
            "train.finetune_epochs" => t.finetune_epochs = parse_value(key, value)?,
            "train.mldg_weight" => t.mldg_weight = parse_value(key, value)?,
            "train.seed" => {
                t.seed = parse_value(key, value)?;
                self.seeds = vec![t.seed];
            }
            "run.seeds" => {
                self.seeds = parse_list(key, value)?;
                if let Some(&first) = self.seeds.first() {
                    self.train.seed = first;
                }
            }
            "diagnose.probe_batch_size" => self.probe_batch_size = parse_value(key, value)?,
            k if k.starts_with("sweep.") => self.sweep.set_axis(&k["sweep.".len()..], value)?,
            other => return Err(Error::Config(format!("unknown key {other}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("run.seeds must list at least one seed".into()));
        }
        if self.probe_batch_size == 0 {
            return Err(Error::Config("diagnose.probe_batch_size must be >= 1".into()));
        }
        self.model_spec(1, 1, 0).validate()?;
        Ok(())
    }

    /// Model over an id space of the given size.
    pub fn model_spec(&self, num_users: usize, num_items: usize, seed: u64) -> ModelSpec {
        let mut spec = ModelSpec::new(num_users, num_items, self.embed_dim, self.hidden.clone());
        spec.activation = self.activation;
        spec.seed = seed;
        spec
    }

    /// Training configuration of one repeat.
    pub fn train_for_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    /// Every key with its current value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.data {
            DataSource::File(p) => kv("data.path", p.display().to_string()),
            DataSource::Synthetic(sp) => {
                kv("synthetic.n_domains", sp.n_domains.to_string());
                kv("synthetic.users_per_domain", sp.users_per_domain.to_string());
                kv("synthetic.items_per_domain", sp.items_per_domain.to_string());
                kv("synthetic.overlap_fraction", sp.overlap_fraction.to_string());
                kv("synthetic.conflict_strength", sp.conflict_strength.to_string());
                kv("synthetic.ctr_ratio_lo", sp.ctr_ratio_range.0.to_string());
                kv("synthetic.ctr_ratio_hi", sp.ctr_ratio_range.1.to_string());
                kv("synthetic.latent_dim", sp.latent_dim.to_string());
                kv("synthetic.positives_per_user", sp.positives_per_user.to_string());
                kv("synthetic.negative_sampling", sp.negative_sampling.as_str().to_string());
                kv("synthetic.seed", sp.seed.to_string());
            }
        }
        kv("split.train", self.split.train.to_string());
        kv("split.val", self.split.val.to_string());
        kv("split.test", self.split.test.to_string());
        kv("split.seed", self.split_seed.to_string());
        kv("model.embed_dim", self.embed_dim.to_string());
        kv("model.hidden", join(&self.hidden));
        kv("model.activation", self.activation.as_str().to_string());
        let t = &self.train;
        kv("train.strategy", t.strategy.as_str().to_string());
        kv("train.alpha", t.alpha.to_string());
        kv("train.beta", t.beta.to_string());
        kv("train.gamma", t.gamma.to_string());
        kv("train.k", t.k.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.inner_steps_per_domain", t.inner_steps_per_domain.to_string());
        kv("train.optimizer", t.optimizer.as_str().to_string());
        kv("train.adam_beta1", t.adam.beta1.to_string());
        kv("train.adam_beta2", t.adam.beta2.to_string());
        kv("train.adam_eps", t.adam.eps.to_string());
        kv("train.finetune_epochs", t.finetune_epochs.to_string());
        kv("train.mldg_weight", t.mldg_weight.to_string());
        kv("run.seeds", join(&self.seeds));
        kv("diagnose.probe_batch_size", self.probe_batch_size.to_string());
        let g = &self.sweep;
        for (name, values) in [
            ("sweep.alpha", join(&g.alpha)),
            ("sweep.beta", join(&g.beta)),
            ("sweep.gamma", join(&g.gamma)),
            ("sweep.k", join(&g.k)),
        ] {
            if !values.is_empty() {
                kv(name, values);
            }
        }
        s
    }
}
