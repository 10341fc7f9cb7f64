//! Versioned binary checkpoints shared by the encoder and discriminator.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `ADVMTCKP` |
//! | 4     | format version (`u32`) |
//! | 8     | length of the JSON header (`u64`) |
//! | n     | JSON header: `{"kind": "encoder" \| "discriminator", ...config}` |
//! | 8 * P | parameters as `f64`, in the model's canonical order |
//!
//! `P` is implied by the configuration; a file with fewer or more bytes is
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminatorConfig;
use crate::model::EncoderConfig;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ADVMTCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    KindMismatch { found: &'static str, expected: &'static str },
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Encoder(EncoderConfig),
    Discriminator(DiscriminatorConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Encoder(_) => "encoder",
            ModelConfig::Discriminator(_) => "discriminator",
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            ModelConfig::Encoder(c) => c.parameter_count(),
            ModelConfig::Discriminator(c) => c.parameter_count(),
        }
    }
}

pub fn encode(config: &ModelConfig, params: &[Tensor]) -> Vec<u8> {
    let header = serde_json::to_vec(config).expect("config serializes");
    let n: usize = params.iter().map(Tensor::numel).sum();
    let mut out = Vec::with_capacity(20 + header.len() + 8 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in params {
        for v in p.data().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8], CheckpointError> {
    let end = *at + n;
    if end > bytes.len() {
        return Err(CheckpointError::Truncated {
            expected: end,
            found: bytes.len(),
        });
    }
    let slice = &bytes[*at..end];
    *at = end;
    Ok(slice)
}

pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, Vec<f64>), CheckpointError> {
    let mut at = 0;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    at += MAGIC.len();
    let version = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().expect("8 bytes")) as usize;
    let config: ModelConfig = serde_json::from_slice(take(bytes, &mut at, header_len)?)?;
    let n = config.parameter_count();
    let body = take(bytes, &mut at, 8 * n)?;
    if at != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - at));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((config, values))
}

pub fn write(path: &Path, config: &ModelConfig, params: &[Tensor]) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(config, params)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read(path: &Path) -> Result<(ModelConfig, Vec<f64>), CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

/// Copies flat checkpoint values into parameter tensors, in order.
pub(crate) fn assign(params: &[Tensor], values: &[f64]) {
    let mut at = 0;
    for p in params {
        let n = p.numel();
        p.data_mut().copy_from_slice(&values[at..at + n]);
        at += n;
    }
    debug_assert_eq!(at, values.len());
}
