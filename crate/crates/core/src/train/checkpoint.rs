//! Binary checkpoints of named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "XGCKPT1\0"
//! fingerprint  u64      network config fingerprint
//! count        u32      number of entries
//! entry        × count:
//!   name_len   u32
//!   name       name_len bytes, UTF-8
//!   dtype      u8       0 = f32
//!   rank       u32
//!   dims       rank × u64
//!   payload    numel × f32
//! ```
//!
//! Parameters are stored under their own names, batch-norm running moments
//! as `<bn>/running_mean` and `<bn>/running_var`, and optimizer state under
//! the reserved `__optim__/` prefix (`__optim__/velocity/<param>` and the
//! scalar `__optim__/step`, exact up to 2^24 steps).

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use super::OptimState;
use crate::error::{Error, Result};
use crate::nn::{Network, TruncGaussSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"XGCKPT1\0";
pub const OPTIM_PREFIX: &str = "__optim__/";
const DTYPE_F32: u8 = 0;
const RUNNING_MEAN: &str = "running_mean";
const RUNNING_VAR: &str = "running_var";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: u64,
    pub tensors: BTreeMap<String, Tensor>,
}

/// What [`Checkpoint::restore`] did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Head parameters kept at their fresh initialization.
    pub reinitialized: Vec<String>,
    pub optimizer_restored: bool,
}

impl Checkpoint {
    pub fn from_network(net: &Network, optim: Option<&OptimState>) -> Self {
        let mut tensors = net.params().clone();
        for (name, bn) in &net.model().bn {
            tensors.insert(format!("{name}/{RUNNING_MEAN}"), bn.running_mean.clone());
            tensors.insert(format!("{name}/{RUNNING_VAR}"), bn.running_var.clone());
        }
        if let Some(o) = optim {
            for (name, v) in &o.velocity {
                tensors.insert(format!("{OPTIM_PREFIX}velocity/{name}"), v.clone());
            }
            tensors.insert(format!("{OPTIM_PREFIX}step"), Tensor::scalar(o.step as f32));
        }
        Self {
            fingerprint: net.config().fingerprint(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Data("not a checkpoint (bad magic)".into()));
        }
        let fingerprint = r.u64()?;
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Data("checkpoint entry name is not UTF-8".into()))?
                .to_owned();
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(Error::Data(format!("{name}: unsupported dtype tag {dtype}")));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::Data(format!("{name}: implausible shape {shape:?}")))?;
            let data = r
                .take(numel * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| Error::Data(format!("{name}: {e}")))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Data(format!("duplicate checkpoint entry {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Data(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            fingerprint,
            tensors,
        })
    }

    /// Writes via a temporary file and rename, so an interrupted write never
    /// replaces a good checkpoint.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter().filter(|(k, _)| !k.starts_with(OPTIM_PREFIX))
    }

    /// Loads parameters and running moments by name.
    ///
    /// Head parameters whose shape differs (a different class count) are
    /// re-initialized from `init`; any other missing, surplus or
    /// mis-shaped entry makes the checkpoint incompatible. Optimizer state
    /// is restored only when nothing was re-initialized.
    pub fn restore<R: Rng + ?Sized>(
        &self,
        net: &mut Network,
        optim: &mut OptimState,
        init: &TruncGaussSpec,
        rng: &mut R,
    ) -> Result<LoadReport> {
        let mut expected: BTreeMap<String, Vec<usize>> = net
            .params()
            .iter()
            .map(|(k, v)| (k.clone(), v.shape().to_vec()))
            .collect();
        for (name, bn) in &net.model().bn {
            let shape = bn.running_mean.shape().to_vec();
            expected.insert(format!("{name}/{RUNNING_MEAN}"), shape.clone());
            expected.insert(format!("{name}/{RUNNING_VAR}"), shape);
        }

        let mut offending = Vec::new();
        let mut report = LoadReport::default();
        for (name, shape) in &expected {
            match self.tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() => report.loaded.push(name.clone()),
                _ if Network::<f32>::is_head_param(name) => report.reinitialized.push(name.clone()),
                _ => offending.push(name.clone()),
            }
        }
        for (name, _) in self.params() {
            if !expected.contains_key(name) && !Network::<f32>::is_head_param(name) {
                offending.push(name.clone());
            }
        }
        if !offending.is_empty() {
            offending.sort();
            return Err(Error::CheckpointIncompatible { names: offending });
        }

        let bn_names: Vec<String> = net.model().bn.keys().cloned().collect();
        for name in &report.loaded {
            if net.params().contains_key(name) {
                net.params_mut().insert(name.clone(), self.tensors[name].clone());
            }
        }
        for bn in bn_names {
            let state = net.model_mut().bn.get_mut(&bn).expect("known batch norm");
            state.running_mean = self.tensors[&format!("{bn}/{RUNNING_MEAN}")].clone();
            state.running_var = self.tensors[&format!("{bn}/{RUNNING_VAR}")].clone();
        }
        for name in &report.reinitialized {
            let shape = expected[name].clone();
            let fresh = if name.ends_with("/weight") || name.ends_with("/kernel") {
                init.sample(&shape, rng)?
            } else {
                Tensor::zeros(&shape)
            };
            net.params_mut().insert(name.clone(), fresh);
        }

        *optim = OptimState::default();
        if report.reinitialized.is_empty() {
            for (name, t) in &self.tensors {
                if let Some(p) = name.strip_prefix(&format!("{OPTIM_PREFIX}velocity/")) {
                    if expected.get(p).is_some_and(|s| s.as_slice() == t.shape()) {
                        optim.velocity.insert(p.to_owned(), t.clone());
                    }
                }
            }
            if let Some(step) = self.tensors.get(&format!("{OPTIM_PREFIX}step")) {
                optim.step = step.item()? as u64;
                report.optimizer_restored = true;
            }
        }
        Ok(report)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Data("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
