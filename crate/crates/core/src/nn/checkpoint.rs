//! `.pcgd` checkpoint files.
//!
//! Layout: the four bytes `PCGD`, a little-endian `u32` manifest length,
//! the UTF-8 JSON manifest, then one blob of little-endian `f32` values.
//! The manifest lists every tensor as `(name, shape, offset, prunable)`;
//! offsets are byte offsets into the blob and the blob is the
//! concatenation of the parameter section, the mask section and the
//! optimizer-moment section, each in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::adam::AdamState;
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PCGD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub tensor: Tensor<f32>,
    pub prunable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSection {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Free-form training-loop state (epoch, plateau counters, ...).
    pub extra: Value,
    /// First moments then second moments, named `m/<param>` and `v/<param>`.
    pub moments: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Value,
    pub tensors: Vec<Entry>,
    pub masks: Vec<Entry>,
    pub optimizer: Option<OptimizerSection>,
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    prunable: bool,
}

#[derive(Serialize, Deserialize)]
struct OptimizerRecord {
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    extra: Value,
    moments: Vec<EntryRecord>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    meta: Value,
    tensors: Vec<EntryRecord>,
    masks: Vec<EntryRecord>,
    optimizer: Option<OptimizerRecord>,
}

impl Checkpoint {
    pub fn from_params(params: &ParamStore<f32>, meta: Value) -> Self {
        Checkpoint {
            meta,
            tensors: params
                .iter()
                .map(|(name, p)| Entry {
                    name: name.to_string(),
                    tensor: p.value.clone(),
                    prunable: p.prunable,
                })
                .collect(),
            masks: Vec::new(),
            optimizer: None,
        }
    }

    /// Rebuild a parameter store (gradients zeroed).
    pub fn to_params(&self) -> Result<ParamStore<f32>> {
        let mut ps = ParamStore::new();
        for e in &self.tensors {
            ps.insert(&e.name, e.tensor.clone(), e.prunable)?;
        }
        Ok(ps)
    }

    pub fn set_optimizer(&mut self, state: &AdamState<f32>, extra: Value) {
        let mut moments = Vec::with_capacity(2 * state.moments.len());
        for (name, (m, _)) in &state.moments {
            moments.push(Entry {
                name: format!("m/{name}"),
                tensor: m.clone(),
                prunable: false,
            });
        }
        for (name, (_, v)) in &state.moments {
            moments.push(Entry {
                name: format!("v/{name}"),
                tensor: v.clone(),
                prunable: false,
            });
        }
        self.optimizer = Some(OptimizerSection {
            step: state.step,
            lr: state.lr,
            beta1: state.beta1,
            beta2: state.beta2,
            epsilon: state.epsilon,
            extra,
            moments,
        });
    }

    /// Restore Adam state from the optimizer section, if present.
    pub fn adam_state(&self) -> Result<Option<AdamState<f32>>> {
        let Some(opt) = &self.optimizer else {
            return Ok(None);
        };
        let mut st = AdamState::new(opt.lr);
        st.step = opt.step;
        st.beta1 = opt.beta1;
        st.beta2 = opt.beta2;
        st.epsilon = opt.epsilon;
        let half = opt.moments.len() / 2;
        if opt.moments.len() != 2 * half {
            return Err(Error::format(0, "optimizer moments are not paired"));
        }
        for (m, v) in opt.moments[..half].iter().zip(&opt.moments[half..]) {
            let (Some(mn), Some(vn)) = (m.name.strip_prefix("m/"), v.name.strip_prefix("v/"))
            else {
                return Err(Error::format(0, "optimizer moment names malformed"));
            };
            if mn != vn {
                return Err(Error::format(0, "optimizer moments out of order"));
            }
            st.moments
                .insert(mn.to_string(), (m.tensor.clone(), v.tensor.clone()));
        }
        Ok(Some(st))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blob: Vec<u8> = Vec::new();
        let record = |e: &Entry, blob: &mut Vec<u8>| -> EntryRecord {
            let offset = blob.len() as u64;
            for v in e.tensor.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            EntryRecord {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                offset,
                prunable: e.prunable,
            }
        };
        let tensors = self.tensors.iter().map(|e| record(e, &mut blob)).collect();
        let masks = self.masks.iter().map(|e| record(e, &mut blob)).collect();
        let optimizer = self.optimizer.as_ref().map(|o| OptimizerRecord {
            step: o.step,
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            epsilon: o.epsilon,
            extra: o.extra.clone(),
            moments: o.moments.iter().map(|e| record(e, &mut blob)).collect(),
        });
        let manifest = Manifest {
            format: "pcgd".into(),
            version: VERSION,
            meta: self.meta.clone(),
            tensors,
            masks,
            optimizer,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(8 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::format(0, "bad magic, expected PCGD"));
        }
        if bytes.len() < 8 {
            return Err(Error::format(4, "truncated manifest length"));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let json_end = 8 + len;
        if bytes.len() < json_end {
            return Err(Error::format(8, "truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[8..json_end])
            .map_err(|e| Error::format(8, format!("invalid manifest: {e}")))?;
        if manifest.format != "pcgd" || manifest.version != VERSION {
            return Err(Error::format(
                8,
                format!(
                    "unsupported checkpoint {} v{}",
                    manifest.format, manifest.version
                ),
            ));
        }
        let blob = &bytes[json_end..];
        let mut expected = 0u64;
        let mut decode = |r: &EntryRecord| -> Result<Entry> {
            let base = json_end as u64 + r.offset;
            if r.offset != expected {
                return Err(Error::format(
                    base,
                    format!("tensor `{}` not contiguous in blob", r.name),
                ));
            }
            let n: usize = r.shape.iter().product();
            let start = r.offset as usize;
            let end = start + 4 * n;
            if end > blob.len() {
                return Err(Error::format(
                    json_end as u64 + blob.len() as u64,
                    format!("truncated data for `{}`", r.name),
                ));
            }
            expected = end as u64;
            let data = blob[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let tensor =
                Tensor::from_vec(&r.shape, data).map_err(|e| Error::format(base, e.to_string()))?;
            Ok(Entry {
                name: r.name.clone(),
                tensor,
                prunable: r.prunable,
            })
        };
        let tensors = manifest
            .tensors
            .iter()
            .map(&mut decode)
            .collect::<Result<_>>()?;
        let masks = manifest
            .masks
            .iter()
            .map(&mut decode)
            .collect::<Result<_>>()?;
        let optimizer = match &manifest.optimizer {
            None => None,
            Some(o) => Some(OptimizerSection {
                step: o.step,
                lr: o.lr,
                beta1: o.beta1,
                beta2: o.beta2,
                epsilon: o.epsilon,
                extra: o.extra.clone(),
                moments: o.moments.iter().map(&mut decode).collect::<Result<_>>()?,
            }),
        };
        if expected as usize != blob.len() {
            return Err(Error::format(
                json_end as u64 + expected,
                "trailing bytes after last tensor",
            ));
        }
        Ok(Checkpoint {
            meta: manifest.meta,
            tensors,
            masks,
            optimizer,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Nonzero scalars over the parameter section, counted directly from
    /// the stored values.
    pub fn count_nonzero(&self) -> usize {
        self.tensors
            .iter()
            .map(|e| e.tensor.data().iter().filter(|v| **v != 0.0).count())
            .sum()
    }
}
