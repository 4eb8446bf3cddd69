//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `PFNNCKPT`, the JSON header length as a
//! little-endian `u64`, the UTF-8 JSON header, then the payload as
//! little-endian `f64` values. Network checkpoints and reference solutions
//! share this container and differ only in the header.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::nn::{Activation, InputMap, MlpParams};

pub const MAGIC: &[u8; 8] = b"PFNNCKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Value,
    pub blob: Vec<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.blob {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("missing PFNNCKPT magic".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let len = usize::try_from(len).map_err(|_| Error::Checkpoint("header length overflow".into()))?;
        let body = &bytes[16..];
        if body.len() < len {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Value = serde_json::from_slice(&body[..len])?;
        let payload = &body[len..];
        if !payload.len().is_multiple_of(8) {
            return Err(Error::Checkpoint(format!("payload length {} is not a multiple of 8", payload.len())));
        }
        let blob = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Checkpoint { header, blob })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn kind(&self) -> Option<&str> {
        self.header.get("kind").and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkHeader {
    kind: String,
    arch: Vec<usize>,
    activations: Vec<Activation>,
    seed: u64,
    input_map: Vec<InputMap>,
    #[serde(default)]
    extra: Value,
}

impl MlpParams {
    /// Packs the network; `extra` is stored verbatim in the header (the
    /// training configuration, for instance).
    pub fn to_checkpoint(&self, extra: Value) -> Result<Checkpoint> {
        let header = NetworkHeader {
            kind: "mlp".into(),
            arch: self.arch(),
            activations: self.activations(),
            seed: self.seed,
            input_map: self.input_map.clone(),
            extra,
        };
        Ok(Checkpoint {
            header: serde_json::to_value(header)?,
            blob: self.flatten(),
        })
    }

    /// Unpacks a network checkpoint, returning the `extra` header field too.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Value)> {
        if ck.kind() != Some("mlp") {
            return Err(Error::Checkpoint(format!("expected an mlp checkpoint, found {:?}", ck.kind())));
        }
        let h: NetworkHeader = serde_json::from_value(ck.header.clone())?;
        let p = MlpParams::from_flat(&h.arch, &h.activations, h.input_map, h.seed, &ck.blob)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((p, h.extra))
    }
}
