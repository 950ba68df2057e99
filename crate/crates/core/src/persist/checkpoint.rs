//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes   "PDISTCKP"
//! version    u32 LE
//! header_len u64 LE
//! header     JSON: config, tensor manifest, optional optimizer manifest
//! payload    f64 LE, tensors in manifest order, then optimizer tensors
//! checksum   SHA-256 of every preceding byte
//! ```

use crate::curriculum::AdamState;
use crate::distill::MappingParams;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TransformerWeights};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"PDISTCKP";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;
const PREAMBLE_LEN: usize = 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    tensors: Vec<ManifestEntry>,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    step: usize,
    tensors: Vec<ManifestEntry>,
}

/// Saved optimizer progress: the step count and per-tensor moments.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: usize,
    pub states: Vec<AdamState>,
}

/// Model configuration, named tensors, and optional optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerSnapshot>,
}

impl Checkpoint {
    /// Model weights, plus alignment matrices for a student.
    pub fn from_model(
        config: &ModelConfig,
        weights: &TransformerWeights,
        maps: Option<&MappingParams>,
    ) -> Self {
        let mut tensors: Vec<(String, Tensor)> = weights
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.clone().with_requires_grad(false)))
            .collect();
        if let Some(m) = maps {
            tensors.extend(
                m.named()
                    .into_iter()
                    .map(|(n, t)| (n, t.clone().with_requires_grad(false))),
            );
        }
        Checkpoint {
            config: config.clone(),
            tensors,
            optimizer: None,
        }
    }

    pub fn with_optimizer(mut self, snapshot: OptimizerSnapshot) -> Self {
        self.optimizer = Some(snapshot);
        self
    }

    /// Encoder weights; fails when the manifest does not match the config.
    pub fn weights(&self) -> Result<TransformerWeights> {
        let model: Vec<(String, Tensor)> = self
            .tensors
            .iter()
            .filter(|(n, _)| !n.starts_with("map."))
            .cloned()
            .collect();
        TransformerWeights::from_named(&self.config, model)
            .map_err(|e| Error::Format(format!("checkpoint does not match its config: {e}")))
    }

    /// Alignment matrices, when the checkpoint holds a student.
    pub fn maps(&self) -> Result<Option<MappingParams>> {
        let maps: Vec<(String, Tensor)> = self
            .tensors
            .iter()
            .filter(|(n, _)| n.starts_with("map."))
            .cloned()
            .collect();
        if maps.is_empty() {
            return Ok(None);
        }
        MappingParams::from_named(maps, true).map(Some)
    }

    /// Checks the stored config and manifest against `expected`.
    pub fn expect_config(&self, expected: &ModelConfig) -> Result<()> {
        if &self.config != expected {
            return Err(Error::Format(format!(
                "checkpoint config {:?} differs from the declared config {:?}",
                self.config, expected
            )));
        }
        self.weights().map(|_| ())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0usize;
        let mut entry = |name: String, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            let e = ManifestEntry { name, shape, offset };
            offset += len * 8;
            e
        };
        let tensors: Vec<ManifestEntry> = self
            .tensors
            .iter()
            .map(|(n, t)| entry(n.clone(), t.shape().to_vec()))
            .collect();
        let optimizer = self.optimizer.as_ref().map(|o| OptimizerHeader {
            step: o.step,
            tensors: self
                .optimizer_names()
                .into_iter()
                .zip(optimizer_vectors(o))
                .map(|(n, v)| entry(n, vec![v.len()]))
                .collect(),
        });
        let header = Header {
            config: self.config.clone(),
            tensors,
            optimizer,
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;

        let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + offset + CHECKSUM_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            write_f64s(&mut out, t.data());
        }
        if let Some(o) = &self.optimizer {
            for v in optimizer_vectors(o) {
                write_f64s(&mut out, v);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE_LEN + CHECKSUM_LEN || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let body_end = bytes.len() - CHECKSUM_LEN;
        if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
            return Err(Error::Checksum {
                start: 0,
                end: body_end,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let payload_start = PREAMBLE_LEN
            .checked_add(header_len)
            .filter(|&p| p <= body_end)
            .ok_or_else(|| Error::Format("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE_LEN..payload_start])
            .map_err(|e| Error::Format(format!("header: {e}")))?;
        let payload = &bytes[payload_start..body_end];

        let mut expected = 0usize;
        let mut read = |entry: &ManifestEntry| -> Result<Vec<f64>> {
            if entry.offset != expected {
                return Err(Error::Format(format!(
                    "tensor {} at unexpected offset",
                    entry.name
                )));
            }
            let len: usize = entry.shape.iter().product();
            let end = entry.offset + len * 8;
            if end > payload.len() {
                return Err(Error::Format(format!(
                    "tensor {} runs past the payload",
                    entry.name
                )));
            }
            expected = end;
            Ok(payload[entry.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let data = read(entry)?;
            tensors.push((entry.name.clone(), Tensor::new(&entry.shape, data)?));
        }
        let optimizer = match &header.optimizer {
            None => None,
            Some(o) => {
                if o.tensors.len() % 2 != 0 {
                    return Err(Error::Format("optimizer section needs m/v pairs".into()));
                }
                let mut states = Vec::with_capacity(o.tensors.len() / 2);
                for pair in o.tensors.chunks_exact(2) {
                    states.push(AdamState {
                        m: read(&pair[0])?,
                        v: read(&pair[1])?,
                    });
                }
                Some(OptimizerSnapshot { step: o.step, states })
            }
        };
        if expected != payload.len() {
            return Err(Error::Format("payload has trailing bytes".into()));
        }
        Ok(Checkpoint {
            config: header.config,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    fn optimizer_names(&self) -> Vec<String> {
        self.optimizer
            .as_ref()
            .map(|o| {
                (0..o.states.len())
                    .flat_map(|i| [format!("adam.{i}.m"), format!("adam.{i}.v")])
                    .collect()
            })
            .unwrap_or_default()
    }
}

fn optimizer_vectors(o: &OptimizerSnapshot) -> impl Iterator<Item = &Vec<f64>> {
    o.states.iter().flat_map(|s| [&s.m, &s.v])
}

fn write_f64s(out: &mut Vec<u8>, data: &[f64]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes a model checkpoint.
pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    weights: &TransformerWeights,
    optimizer: Option<&OptimizerSnapshot>,
) -> Result<()> {
    let mut ckpt = Checkpoint::from_model(config, weights, None);
    ckpt.optimizer = optimizer.cloned();
    ckpt.save(path)
}

/// Reads a model checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, TransformerWeights, Option<OptimizerSnapshot>)> {
    let ckpt = Checkpoint::load(path)?;
    let weights = ckpt.weights()?;
    Ok((ckpt.config, weights, ckpt.optimizer))
}
