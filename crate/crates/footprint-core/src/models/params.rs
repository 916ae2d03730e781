//! Parameter store with seeded variance-scaling init and a single-file
//! checkpoint container (declarative spec JSON + parameter blobs keyed
//! by layer path).

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

enum Source {
    /// Fresh init from a seeded stream (candle's CPU RNG cannot be
    /// seeded, so parameters are drawn here and wrapped in Vars).
    Seeded(RefCell<ChaCha8Rng>),
    /// Pre-loaded blobs from a checkpoint.
    Loaded(BTreeMap<String, (Vec<usize>, Vec<f32>)>),
}

pub struct ParamStore {
    source: Source,
    vars: RefCell<BTreeMap<String, Var>>,
    device: Device,
}

impl ParamStore {
    pub fn seeded(seed: u64, device: Device) -> Self {
        Self {
            source: Source::Seeded(RefCell::new(ChaCha8Rng::seed_from_u64(seed))),
            vars: RefCell::new(BTreeMap::new()),
            device,
        }
    }

    fn from_blobs(blobs: BTreeMap<String, (Vec<usize>, Vec<f32>)>, device: Device) -> Self {
        Self {
            source: Source::Loaded(blobs),
            vars: RefCell::new(BTreeMap::new()),
            device,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Fetches or creates the named parameter. Fresh parameters use
    /// Kaiming-uniform scaling with the given fan-in; `fan_in == 0`
    /// zero-initializes (biases).
    pub fn get(&self, name: &str, shape: &[usize], fan_in: usize) -> Result<Tensor> {
        if let Some(var) = self.vars.borrow().get(name) {
            return Ok(var.as_tensor().clone());
        }
        let elems: usize = shape.iter().product();
        let data: Vec<f32> = match &self.source {
            Source::Seeded(rng) => {
                if fan_in == 0 {
                    vec![0.0; elems]
                } else {
                    let bound = (6.0 / fan_in as f64).sqrt() as f32;
                    let mut rng = rng.borrow_mut();
                    (0..elems).map(|_| rng.gen_range(-bound..bound)).collect()
                }
            }
            Source::Loaded(blobs) => {
                let (blob_shape, data) = blobs.get(name).ok_or_else(|| {
                    Error::invalid("checkpoint", format!("missing parameter `{name}`"))
                })?;
                if blob_shape != shape {
                    return Err(Error::ShapeMismatch {
                        context: format!("checkpoint parameter `{name}`"),
                        lhs: shape.to_vec(),
                        rhs: blob_shape.clone(),
                    });
                }
                data.clone()
            }
        };
        let tensor = Tensor::from_vec(data, shape, &self.device)?;
        let var = Var::from_tensor(&tensor)?;
        let out = var.as_tensor().clone();
        self.vars.borrow_mut().insert(name.to_string(), var);
        Ok(out)
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.borrow().values().cloned().collect()
    }

    pub fn param_count(&self) -> usize {
        self.vars.borrow().values().map(|v| v.elem_count()).sum()
    }

    /// name -> shape map of every registered parameter.
    pub fn shapes(&self) -> BTreeMap<String, Vec<usize>> {
        self.vars
            .borrow()
            .iter()
            .map(|(k, v)| (k.clone(), v.dims().to_vec()))
            .collect()
    }

    fn export(&self) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>> {
        let vars = self.vars.borrow();
        let mut out = Vec::with_capacity(vars.len());
        for (name, var) in vars.iter() {
            let flat: Vec<f32> = var.as_tensor().flatten_all()?.to_vec1()?;
            out.push((name.clone(), var.dims().to_vec(), flat));
        }
        Ok(out)
    }

    /// Overwrites the stored vars from another store (post-load swap).
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        let ours = self.vars.borrow();
        let theirs = other.vars.borrow();
        for (name, var) in ours.iter() {
            let src = theirs
                .get(name)
                .ok_or_else(|| Error::invalid("param copy", format!("missing `{name}`")))?;
            var.set(src.as_tensor())?;
        }
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"FPCKPT1\0";

#[derive(Debug, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    /// Declarative model spec plus caller metadata.
    meta: serde_json::Value,
    params: Vec<BlobEntry>,
}

/// Writes a checkpoint: magic, JSON header, raw little-endian f32 blobs.
pub fn save_checkpoint(path: &Path, meta: &serde_json::Value, store: &ParamStore) -> Result<()> {
    let exported = store.export()?;
    let mut entries = Vec::with_capacity(exported.len());
    let mut offset = 0u64;
    for (name, shape, data) in &exported {
        entries.push(BlobEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
            len: data.len() as u64,
        });
        offset += data.len() as u64 * 4;
    }
    let header = serde_json::to_vec(&Header {
        meta: meta.clone(),
        params: entries,
    })?;

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut write = |bytes: &[u8]| file.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&(header.len() as u64).to_le_bytes())?;
    write(&header)?;
    for (_, _, data) in &exported {
        let mut bytes = Vec::with_capacity(data.len() * 4);
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write(&bytes)?;
    }
    Ok(())
}

/// Reads a checkpoint back into (metadata, parameter store). The caller
/// must rebuild the model from the embedded spec and verify that every
/// parameter the graph requests exists with the right shape — that is
/// the spec -> graph equality check.
pub fn load_checkpoint(path: &Path, device: Device) -> Result<(serde_json::Value, ParamStore)> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint {
            path: path.into(),
            why: "bad magic; not a checkpoint file".into(),
        });
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes).map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&header_bytes)?;

    let mut rest = Vec::new();
    file.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;

    let mut blobs = BTreeMap::new();
    for entry in header.params {
        let start = entry.offset as usize;
        let end = start + entry.len as usize * 4;
        if end > rest.len() {
            return Err(Error::Checkpoint {
                path: path.into(),
                why: format!("truncated blob for `{}`", entry.name),
            });
        }
        let data: Vec<f32> = rest[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let expected: usize = entry.shape.iter().product();
        if data.len() != expected {
            return Err(Error::Checkpoint {
                path: path.into(),
                why: format!("blob `{}` has {} values, shape wants {expected}", entry.name, data.len()),
            });
        }
        blobs.insert(entry.name, (entry.shape, data));
    }
    Ok((header.meta, ParamStore::from_blobs(blobs, device)))
}

/// Verifies that the rebuilt graph consumed exactly the checkpoint's
/// parameter set.
pub fn verify_consumed(path: &Path, store: &ParamStore) -> Result<()> {
    if let Source::Loaded(blobs) = &store.source {
        let vars = store.vars.borrow();
        for name in blobs.keys() {
            if !vars.contains_key(name) {
                return Err(Error::Checkpoint {
                    path: path.into(),
                    why: format!("checkpoint parameter `{name}` not used by the rebuilt graph"),
                });
            }
        }
    }
    Ok(())
}

/// All-zeros dtype sanity helper for tests.
pub fn zeros(shape: &[usize], device: &Device) -> Result<Tensor> {
    Ok(Tensor::zeros(shape, DType::F32, device)?)
}
