//! Binary checkpoint files.
//!
//! Layout: the magic bytes `PMLM`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a UTF-8 JSON header and then the raw
//! little-endian `f32` payload of every tensor listed in the header manifest,
//! back to back in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Mode, TrainConfig};
use super::optim::OptimizerState;
use crate::autograd::ParamStore;
use crate::error::{CheckpointError, Result};
use crate::masking::MaskingConfig;
use crate::model::{ModelConfig, ModelWeights};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"PMLM";
pub const FORMAT_VERSION: u32 = 1;
const MOMENTUM_PREFIX: &str = "momentum:";
const PREAMBLE: usize = 16;

/// Progress counters of a pretraining run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Completed optimizer updates across both phases.
    pub step: u64,
    pub phase1_steps: u64,
    pub phase2_steps: u64,
    pub tokens_seen: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub train_config: TrainConfig,
    pub mode: Mode,
    pub counters: Counters,
    pub rng: RngState,
    pub weights: ModelWeights<f32>,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn model_config(&self) -> &ModelConfig {
        &self.weights.config
    }

    /// Bitwise equality of every tensor and counter.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.train_config == other.train_config
            && self.mode == other.mode
            && self.counters == other.counters
            && self.rng == other.rng
            && self.weights.bit_eq(&other.weights)
            && self.optimizer.bit_eq(&other.optimizer)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    model_config: ModelConfig,
    train_config: TrainConfig,
    masking: MaskingConfig,
    mode: Mode,
    counters: Counters,
    rng: RngState,
    tensors: Vec<ManifestEntry>,
}

fn named_tensors(ck: &Checkpoint) -> Vec<(String, &Tensor<f32>)> {
    let params = ck.weights.params.iter().map(|p| (p.name.clone(), &p.value));
    let momentum = ck
        .weights
        .params
        .iter()
        .zip(&ck.optimizer.momentum)
        .map(|(p, m)| (format!("{MOMENTUM_PREFIX}{}", p.name), m));
    params.chain(momentum).collect()
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    ck.optimizer.check(&ck.weights.params)?;
    let tensors = named_tensors(ck);
    let mut offset = 0u64;
    let mut manifest = Vec::with_capacity(tensors.len());
    for (name, t) in &tensors {
        let length = 4 * t.numel() as u64;
        manifest.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            length,
        });
        offset += length;
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        model_config: ck.weights.config.clone(),
        train_config: ck.train_config.clone(),
        masking: ck.train_config.masking.clone(),
        mode: ck.mode,
        counters: ck.counters,
        rng: ck.rng.clone(),
        tensors: manifest,
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + offset as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated(format!("{} bytes, no preamble", bytes.len())).into());
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic).into());
    }
    if bytes.len() < PREAMBLE {
        return Err(CheckpointError::Truncated(format!("{} bytes, preamble incomplete", bytes.len())).into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("eight bytes"));
    let header_end = (PREAMBLE as u64)
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| {
            CheckpointError::Truncated(format!(
                "header declares {header_len} bytes, file has {}",
                bytes.len() - PREAMBLE
            ))
        })? as usize;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format_version != version {
        return Err(CheckpointError::Header(format!(
            "header version {} disagrees with preamble {version}",
            header.format_version
        ))
        .into());
    }

    let payload = &bytes[header_end..];
    let mut expected_offset = 0u64;
    for e in &header.tensors {
        let numel: usize = e.shape.iter().product();
        if e.length != 4 * numel as u64 || e.offset != expected_offset {
            return Err(CheckpointError::Manifest(format!(
                "tensor {} declares offset {} length {} for shape {:?}, expected offset {expected_offset} length {}",
                e.name,
                e.offset,
                e.length,
                e.shape,
                4 * numel
            ))
            .into());
        }
        expected_offset += e.length;
    }
    if (payload.len() as u64) < expected_offset {
        return Err(CheckpointError::Truncated(format!(
            "payload has {} bytes, manifest needs {expected_offset}",
            payload.len()
        ))
        .into());
    }
    if payload.len() as u64 > expected_offset {
        return Err(CheckpointError::Manifest(format!(
            "payload has {} bytes, manifest accounts for {expected_offset}",
            payload.len()
        ))
        .into());
    }

    let mut params = ParamStore::new();
    let mut momentum = Vec::new();
    for e in &header.tensors {
        let raw = &payload[e.offset as usize..(e.offset + e.length) as usize];
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| CheckpointError::Manifest(err.to_string()))?;
        match e.name.strip_prefix(MOMENTUM_PREFIX) {
            Some(pname) => momentum.push((pname.to_string(), t)),
            None => {
                params
                    .add(e.name.clone(), t)
                    .map_err(|err| CheckpointError::Manifest(err.to_string()))?;
            }
        }
    }
    if momentum.len() != params.len() || momentum.iter().zip(params.iter()).any(|((n, _), p)| *n != p.name) {
        return Err(CheckpointError::Manifest("momentum buffers do not match parameters".into()).into());
    }
    let weights = ModelWeights::from_params(header.model_config, params)
        .map_err(|err| CheckpointError::Manifest(err.to_string()))?;
    let optimizer = OptimizerState {
        momentum: momentum.into_iter().map(|(_, t)| t).collect(),
    };
    optimizer
        .check(&weights.params)
        .map_err(|err| CheckpointError::Manifest(err.to_string()))?;
    let mut train_config = header.train_config;
    train_config.masking = header.masking;
    Ok(Checkpoint {
        train_config,
        mode: header.mode,
        counters: header.counters,
        rng: header.rng,
        weights,
        optimizer,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
