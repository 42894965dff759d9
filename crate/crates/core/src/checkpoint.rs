//! Versioned checkpoint container.
//!
//! Layout: the magic line `SEAFIELD/1\n`, a little-endian `u64` header
//! length, a JSON header describing every tensor, then all tensor data as
//! little-endian `f64` in header order.

use crate::autograd::{Adam, AdamConfig, ParamStore, Tensor};
use crate::data::NormStats;
use crate::error::{Error, Result};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const MAGIC: &[u8] = b"SEAFIELD/1\n";

/// Hex SHA-256 of a canonical config text.
pub fn fingerprint(config_text: &str) -> String {
    Sha256::digest(config_text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_text: String,
    pub fingerprint: String,
    /// Build seed; frozen encodings are redrawn from it on reload.
    pub seed: u64,
    pub iteration: u64,
    pub epoch: usize,
    pub stats: NormStats,
    pub store: ParamStore,
    pub optimizer: Adam,
}

#[derive(Serialize, Deserialize)]
enum Role {
    Param,
    Buffer,
    First(usize),
    Second(usize),
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    role: Role,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: String,
    fingerprint: String,
    seed: u64,
    iteration: u64,
    epoch: usize,
    mean: f64,
    std: f64,
    adam_step: u64,
    adam: [f64; 5],
    tensors: Vec<Entry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(config_text: &str, seed: u64, iteration: u64, epoch: usize, stats: NormStats, store: ParamStore, optimizer: Adam) -> Self {
        Checkpoint {
            config_text: config_text.to_owned(),
            fingerprint: fingerprint(config_text),
            seed,
            iteration,
            epoch,
            stats,
            store,
            optimizer,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut data: Vec<&Tensor> = Vec::new();
        for (id, p) in self.store.iter() {
            let role = if p.trainable { Role::Param } else { Role::Buffer };
            tensors.push(Entry { name: p.name.clone(), shape: p.value.shape().to_vec(), role });
            data.push(&p.value);
            let i = id.index();
            for (moments, make) in [(&self.optimizer.first, Role::First as fn(usize) -> Role), (&self.optimizer.second, Role::Second)] {
                if let Some(Some(m)) = moments.get(i) {
                    tensors.push(Entry { name: p.name.clone(), shape: m.shape().to_vec(), role: make(i) });
                    data.push(m);
                }
            }
        }
        let c = self.optimizer.config;
        let header = Header {
            config: self.config_text.clone(),
            fingerprint: self.fingerprint.clone(),
            seed: self.seed,
            iteration: self.iteration,
            epoch: self.epoch,
            mean: self.stats.mean,
            std: self.stats.std,
            adam_step: self.optimizer.step,
            adam: [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay],
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in data {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("missing SEAFIELD/1 magic"))?;
        if rest.len() < 8 {
            return Err(bad("truncated header length"));
        }
        let len = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
        let rest = &rest[8..];
        if rest.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&rest[..len]).map_err(|e| bad(format!("header: {e}")))?;
        if fingerprint(&header.config) != header.fingerprint {
            return Err(bad("config fingerprint does not match the stored config"));
        }
        let mut payload = &rest[len..];
        let mut store = ParamStore::new();
        let [lr, beta1, beta2, eps, weight_decay] = header.adam;
        let mut optimizer = Adam::new(AdamConfig { lr, beta1, beta2, eps, weight_decay });
        optimizer.step = header.adam_step;
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            if payload.len() < 8 * n {
                return Err(bad(format!("truncated data for {}", e.name)));
            }
            let values = payload[..8 * n].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
            payload = &payload[8 * n..];
            let t = ArrayD::from_shape_vec(IxDyn(&e.shape), values).map_err(|err| bad(err.to_string()))?;
            match e.role {
                Role::Param => {
                    store.add(e.name, t);
                }
                Role::Buffer => {
                    store.add_buffer(e.name, t);
                }
                Role::First(i) | Role::Second(i) => {
                    if i + 1 != store.len() {
                        return Err(bad(format!("moment for {} out of order", e.name)));
                    }
                    let slot = if matches!(e.role, Role::First(_)) { &mut optimizer.first } else { &mut optimizer.second };
                    slot.resize(store.len(), None);
                    slot[i] = Some(t);
                }
            }
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        optimizer.first.resize(store.len(), None);
        optimizer.second.resize(store.len(), None);
        Ok(Checkpoint {
            config_text: header.config,
            fingerprint: header.fingerprint,
            seed: header.seed,
            iteration: header.iteration,
            epoch: header.epoch,
            stats: NormStats { mean: header.mean, std: header.std },
            store,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copies the stored tensors into a freshly built `store`, which must
    /// hold the same names and shapes in the same order.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.store.len() {
            return Err(bad(format!("checkpoint has {} tensors, model has {}", self.store.len(), store.len())));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, (_, saved)) in ids.into_iter().zip(self.store.iter()) {
            let p = store.get(id);
            if p.name != saved.name || p.value.shape() != saved.value.shape() || p.trainable != saved.trainable {
                return Err(bad(format!("tensor {} does not match model tensor {}", saved.name, p.name)));
            }
            store.value_mut(id).assign(&saved.value);
        }
        Ok(())
    }
}
