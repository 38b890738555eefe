//! Versioned binary checkpoint of a model spec and a full training state.
//!
//! Layout (little endian): the magic `MDOPTCKP`, a `u32` version, the model
//! spec, the strategy name, the epoch counter, the shared vector, every
//! specific vector, every optimizer state and the loss-weight scalars.

use std::fs;
use std::path::Path;

use mdopt_core::model::{Activation, ModelSpec};
use mdopt_core::optim::{AdamHyper, OptState, OptimizerKind};
use mdopt_core::param::{Layout, ParamVector};
use mdopt_core::strategy::{LossWeights, MdrState, Strategy};
use std::sync::Arc;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MDOPTCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub strategy: Strategy,
    pub state: MdrState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn vector(&mut self, v: &ParamVector) {
        for &x in v.values() {
            self.f64(x);
        }
    }
    fn opt(&mut self, o: &OptState) {
        self.u8(match o.kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => 1,
        });
        self.f64(o.lr);
        self.f64(o.hyper.beta1);
        self.f64(o.hyper.beta2);
        self.f64(o.hyper.eps);
        self.u64(o.step_count);
        match &o.moments {
            Some((m1, m2)) => {
                self.u8(1);
                self.vector(m1);
                self.vector(m2);
            }
            None => self.u8(0),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
    fn vector(&mut self, layout: &Arc<Layout>) -> Result<ParamVector> {
        let raw = self.take(layout.len() * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(ParamVector::from_values(layout, values)?)
    }
    fn opt(&mut self, layout: &Arc<Layout>) -> Result<OptState> {
        let kind = match self.u8()? {
            0 => OptimizerKind::Sgd,
            1 => OptimizerKind::Adam,
            other => return Err(Error::Checkpoint(format!("unknown optimizer tag {other}"))),
        };
        let lr = self.f64()?;
        let hyper = AdamHyper {
            beta1: self.f64()?,
            beta2: self.f64()?,
            eps: self.f64()?,
        };
        let step_count = self.u64()?;
        let moments = match self.u8()? {
            0 => None,
            1 => Some((self.vector(layout)?, self.vector(layout)?)),
            other => return Err(Error::Checkpoint(format!("bad moments flag {other}"))),
        };
        Ok(OptState {
            kind,
            lr,
            hyper,
            step_count,
            moments,
        })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let st = &self.state;
        let len = self.spec.param_count();
        if st.shared.len() != len || st.specific.iter().any(|v| v.len() != len) {
            return Err(Error::Checkpoint("state does not match the model spec".into()));
        }
        let mut w = Writer(Vec::with_capacity(8 * len * (2 + st.num_domains())));
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let s = &self.spec;
        w.u64(s.num_users as u64);
        w.u64(s.num_items as u64);
        w.u64(s.embed_dim as u64);
        w.u32(s.hidden.len() as u32);
        for &h in &s.hidden {
            w.u64(h as u64);
        }
        w.str(s.activation.as_str());
        w.u64(s.seed);
        w.str(self.strategy.as_str());
        w.u64(st.epoch);
        w.u64(st.num_domains() as u64);
        w.vector(&st.shared);
        for v in &st.specific {
            w.vector(v);
        }
        w.opt(&st.shared_opt);
        for o in &st.specific_opt {
            w.opt(o);
        }
        w.u8(u8::from(st.loss_weights.trainable));
        w.u64(st.loss_weights.log_vars.len() as u64);
        for &s in &st.loss_weights.log_vars {
            w.f64(s);
        }
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let num_users = r.usize()?;
        let num_items = r.usize()?;
        let embed_dim = r.usize()?;
        let n_hidden = r.u32()? as usize;
        let hidden = (0..n_hidden).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let activation: Activation = r.str()?.parse()?;
        let seed = r.u64()?;
        let mut spec = ModelSpec::new(num_users, num_items, embed_dim, hidden);
        spec.activation = activation;
        spec.seed = seed;
        spec.validate()?;
        let strategy: Strategy = r.str()?.parse()?;
        let epoch = r.u64()?;
        let n = r.usize()?;
        let layout = spec.layout();
        let shared = r.vector(&layout)?;
        let specific = (0..n).map(|_| r.vector(&layout)).collect::<Result<Vec<_>>>()?;
        let shared_opt = r.opt(&layout)?;
        let specific_opt = (0..n).map(|_| r.opt(&layout)).collect::<Result<Vec<_>>>()?;
        let trainable = r.u8()? != 0;
        let n_weights = r.usize()?;
        let log_vars = (0..n_weights).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            spec,
            strategy,
            state: MdrState {
                shared,
                specific,
                shared_opt,
                specific_opt,
                loss_weights: LossWeights { log_vars, trainable },
                epoch,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes)
    }
}
