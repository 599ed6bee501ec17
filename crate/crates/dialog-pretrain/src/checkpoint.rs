//! Versioned binary checkpoint container.
//!
//! Layout: magic `DPCK`, format version (u32 LE), header length (u64 LE),
//! a JSON header describing metadata and the array index, then the raw
//! little-endian array payload. Round trips are bit-exact and the header is
//! readable without touching the payload.

use crate::data::Vocabulary;
use crate::encoder::{Components, DialogModel, ModelDims};
use crate::error::{Error, Result};
use crate::tensor::Real;
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: [u8; 4] = *b"DPCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayIndex {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
    /// Element count.
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub dtype: String,
    pub config_hash: String,
    /// "pretrain", "finetune", or "init".
    pub kind: String,
    pub objective: Option<String>,
    pub task: Option<String>,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_value: f64,
    pub dims: ModelDims,
    pub vocab: Vec<String>,
    pub arrays: Vec<ArrayIndex>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<F: Real> {
    pub meta: CheckpointMeta,
    /// Name -> (shape, values), in header order.
    pub arrays: Vec<(String, Vec<usize>, Vec<F>)>,
}

#[derive(Debug, Clone, Default)]
pub struct Provenance {
    pub config_hash: String,
    pub kind: String,
    pub objective: Option<String>,
    pub task: Option<String>,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_value: f64,
}

impl<F: Real> Checkpoint<F> {
    pub fn from_model(model: &DialogModel<F>, vocab: &Vocabulary, prov: Provenance) -> Self {
        let arrays: Vec<(String, Vec<usize>, Vec<F>)> = model
            .store
            .iter()
            .map(|(name, t)| (name.to_string(), t.shape.clone(), t.values.clone()))
            .collect();
        let meta = CheckpointMeta {
            format_version: FORMAT_VERSION,
            dtype: F::DTYPE.to_string(),
            config_hash: prov.config_hash,
            kind: prov.kind,
            objective: prov.objective,
            task: prov.task,
            seed: prov.seed,
            best_epoch: prov.best_epoch,
            best_value: prov.best_value,
            dims: model.dims,
            vocab: vocab.tokens().to_vec(),
            arrays: Vec::new(), // filled on save
        };
        Checkpoint { meta, arrays }
    }

    pub fn array(&self, name: &str) -> Option<(&[usize], &[F])> {
        self.arrays
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, shape, values)| (shape.as_slice(), values.as_slice()))
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_tokens(self.meta.vocab.clone())
    }

    /// Reconstruct a full model carrying exactly the components present in
    /// the checkpoint.
    pub fn to_model(&self) -> Result<DialogModel<F>> {
        let has = |prefix: &str| self.arrays.iter().any(|(n, _, _)| n.starts_with(prefix));
        let components = Components {
            response_encoder: has("resp."),
            decoder: has("dec."),
            bsp_head: has("bsp."),
            dap_head: has("dap."),
        };
        let mut model = DialogModel::new(self.meta.dims, components, self.meta.seed);
        for (name, shape, values) in &self.arrays {
            let id = model.store.by_name(name).ok_or_else(|| {
                Error::Checkpoint(format!("checkpoint array {name} has no model slot"))
            })?;
            let tensor = model.store.get_mut(id);
            if &tensor.shape != shape {
                return Err(Error::ParamShape {
                    name: name.clone(),
                    expected: tensor.shape.clone(),
                    got: shape.clone(),
                });
            }
            tensor.values = values.clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload = Vec::new();
        let mut index = Vec::with_capacity(self.arrays.len());
        for (name, shape, values) in &self.arrays {
            index.push(ArrayIndex {
                name: name.clone(),
                shape: shape.clone(),
                offset: payload.len() as u64,
                len: values.len(),
            });
            for v in values {
                v.write_le(&mut payload);
            }
        }
        let mut meta = self.meta.clone();
        meta.arrays = index;
        let header = serde_json::to_vec(&meta)
            .map_err(|e| Error::json(path.display().to_string(), e))?;

        let mut bytes = Vec::with_capacity(16 + header.len() + payload.len());
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header);
        bytes.extend_from_slice(&payload);
        crate::harness::write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|e| Error::io(display.clone(), e))?;
        if bytes.len() < 16 || bytes[..4] != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{display}: not a checkpoint file (bad magic)"
            )));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{display}: format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16 + header_len;
        if bytes.len() < header_end {
            return Err(Error::Checkpoint(format!(
                "{display}: truncated header (need {header_end} bytes, have {})",
                bytes.len()
            )));
        }
        let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::json(display.clone(), e))?;
        if meta.dtype != F::DTYPE {
            return Err(Error::Checkpoint(format!(
                "{display}: dtype {} does not match requested {}",
                meta.dtype,
                F::DTYPE
            )));
        }
        let payload = &bytes[header_end..];
        let mut arrays = Vec::with_capacity(meta.arrays.len());
        for entry in &meta.arrays {
            let start = entry.offset as usize;
            let end = start + entry.len * F::BYTES;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!(
                    "{display}: truncated payload for {} at offset {} (need {end} bytes, have {})",
                    entry.name,
                    entry.offset,
                    payload.len()
                )));
            }
            if entry.shape.iter().product::<usize>() != entry.len {
                return Err(Error::Checkpoint(format!(
                    "{display}: array {} shape {:?} does not cover {} elements",
                    entry.name, entry.shape, entry.len
                )));
            }
            let values = payload[start..end]
                .chunks_exact(F::BYTES)
                .map(F::read_le)
                .collect();
            arrays.push((entry.name.clone(), entry.shape.clone(), values));
        }
        Ok(Checkpoint { meta, arrays })
    }

    /// Load and require a matching config hash unless explicitly overridden.
    pub fn load_checked(path: &Path, expected_hash: &str, allow_mismatch: bool) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if !allow_mismatch && ckpt.meta.config_hash != expected_hash {
            return Err(Error::Checkpoint(format!(
                "{}: config hash {} does not match current config {} (pass the override flag to force)",
                path.display(),
                ckpt.meta.config_hash,
                expected_hash
            )));
        }
        Ok(ckpt)
    }
}
