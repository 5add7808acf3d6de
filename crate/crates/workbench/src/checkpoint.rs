//! Model checkpoints: an 8-byte little-endian header length, a JSON header
//! with the architecture, then the flat parameters as little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tsxil_core::data::DatasetHeader;
use tsxil_core::models::{Architecture, Network};

use crate::error::{Error, Result};

pub const FORMAT: &str = "tsxil-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub param_count: usize,
    /// Hex SHA-256 of the payload bytes.
    pub payload_sha256: String,
    /// Dataset the model was trained on, with its standardization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Network,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn payload(model: &Network) -> Vec<u8> {
    model.flat_params().iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl Checkpoint {
    pub fn new(model: Network, dataset: Option<DatasetHeader>) -> Self {
        let header = CheckpointHeader {
            format: FORMAT.into(),
            version: VERSION,
            architecture: model.architecture().clone(),
            param_count: model.architecture().param_count(),
            payload_sha256: sha256_hex(&payload(&model)),
            dataset,
        };
        Self { header, model }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("checkpoint headers always serialize");
        let mut out = Vec::with_capacity(8 + header.len() + 8 * self.header.param_count);
        out.extend((header.len() as u64).to_le_bytes());
        out.extend(header);
        out.extend(payload(&self.model));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(|| bad("truncated length prefix"))?.try_into().expect("8 bytes");
        let len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| bad("header length overflows"))?;
        let end = 8usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[8..end])?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(bad(&format!("unsupported format {} v{}", header.format, header.version)));
        }
        let body = &bytes[end..];
        if body.len() != 8 * header.param_count {
            return Err(bad(&format!("payload holds {} bytes, expected {}", body.len(), 8 * header.param_count)));
        }
        if sha256_hex(body) != header.payload_sha256 {
            return Err(bad("payload hash mismatch"));
        }
        let flat: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let model = Network::from_flat(header.architecture.clone(), &flat)?;
        Ok(Self { header, model })
    }

    /// Hash of the serialized checkpoint.
    pub fn hash(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
