//! Checkpoint container: a JSON descriptor plus f32 little-endian parameters,
//! sealed with a SHA-256 trailer.
//!
//! ```text
//! b"REBACKPT" | u32 version | u32 reserved | u64 desc_len | desc JSON
//!            | u64 n_params | n_params × f32le | sha256(all preceding bytes)
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ArchDescriptor, ConvRegressor, ModelError, RegressorModel};

const MAGIC: &[u8; 8] = b"REBACKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("{path}: checksum mismatch")]
    Checksum { path: String },
    #[error("{path}: parameter {index} is not representable as a finite f32")]
    NotF32 { path: String, index: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl CheckpointError {
    pub fn is_not_found(&self) -> bool {
        matches!(self, CheckpointError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

/// Encodes `params` as f32. Values off the f32 grid are rejected, since they
/// would not round-trip.
pub fn encode(descriptor: &serde_json::Value, params: &[f64]) -> Result<Vec<u8>, usize> {
    let desc = serde_json::to_vec(descriptor).expect("descriptor serializes");
    let mut buf = Vec::with_capacity(32 + desc.len() + 4 * params.len() + 32);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&(desc.len() as u64).to_le_bytes());
    buf.extend_from_slice(&desc);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (i, &p) in params.iter().enumerate() {
        let f = p as f32;
        if !f.is_finite() || f as f64 != p {
            return Err(i);
        }
        buf.extend_from_slice(&f.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

pub fn decode(bytes: &[u8], path: &str) -> Result<(serde_json::Value, Vec<f64>), CheckpointError> {
    let corrupt = |reason: &str| CheckpointError::Corrupt {
        path: path.to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < 8 + 4 + 4 + 8 + 8 + 32 {
        return Err(corrupt("file too short"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(CheckpointError::Checksum {
            path: path.to_string(),
        });
    }
    if &body[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| -> Result<u64, CheckpointError> {
        body.get(o..o + 8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| corrupt("truncated header"))
    };
    if u32_at(8) != VERSION {
        return Err(corrupt(&format!("unsupported version {}", u32_at(8))));
    }
    let desc_len = u64_at(16)? as usize;
    let desc_end = 24usize
        .checked_add(desc_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("truncated descriptor"))?;
    let descriptor: serde_json::Value =
        serde_json::from_slice(&body[24..desc_end]).map_err(|e| corrupt(&format!("descriptor: {e}")))?;
    let n = u64_at(desc_end)? as usize;
    let data = &body[desc_end + 8..];
    if Some(data.len()) != n.checked_mul(4) {
        return Err(corrupt("parameter block length mismatch"));
    }
    let params = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((descriptor, params))
}

pub fn write(path: &Path, descriptor: &serde_json::Value, params: &[f64]) -> Result<(), CheckpointError> {
    let bytes = encode(descriptor, params).map_err(|index| CheckpointError::NotF32 {
        path: path.display().to_string(),
        index,
    })?;
    fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read(path: &Path) -> Result<(serde_json::Value, Vec<f64>), CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes, &path.display().to_string())
}

pub fn save_regressor(path: &Path, model: &ConvRegressor) -> Result<(), CheckpointError> {
    write(path, &model.descriptor(), model.params())
}

/// Loads a regressor; it comes back frozen.
pub fn load_regressor(path: &Path) -> Result<ConvRegressor, CheckpointError> {
    let (desc, params) = read(path)?;
    let arch: ArchDescriptor = serde_json::from_value(desc).map_err(|e| CheckpointError::Corrupt {
        path: path.display().to_string(),
        reason: format!("descriptor: {e}"),
    })?;
    let mut model = ConvRegressor::from_parts(arch, params)?;
    model.freeze();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::reference_backbone;
    use crate::volume::{Shape, Volume};

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = reference_backbone(Shape::cube(8), 8, 3).unwrap();
        save_regressor(&path, &m).unwrap();
        let back = load_regressor(&path).unwrap();
        assert!(back.is_frozen());
        assert_eq!(back.params(), m.params());
        let v = Volume::new(Shape::cube(8), (0..512).map(|i| (i % 7) as f32).collect()).unwrap();
        assert_eq!(back.predict_age(&v).to_bits(), m.predict_age(&v).to_bits());
    }

    #[test]
    fn tampering_is_detected() {
        let m = reference_backbone(Shape::cube(8), 8, 3).unwrap();
        let bytes = encode(&m.descriptor(), m.params()).unwrap();
        for at in [0, 30, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[at] ^= 1;
            assert!(decode(&bad, "x").is_err(), "flip at {at}");
        }
        assert!(decode(&bytes[..bytes.len() - 5], "x").is_err());
    }

    #[test]
    fn off_grid_parameters_are_refused() {
        assert_eq!(encode(&serde_json::json!({}), &[0.5, 0.1]), Err(1));
        assert!(encode(&serde_json::json!({}), &[0.5, 0.1f32 as f64]).is_ok());
    }
}
