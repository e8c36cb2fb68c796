//! Checkpoint file: magic, version tag byte, config echo (JSON), scene AABB,
//! step count, then the raw little-endian float32 parameter array.

use super::{FieldConfig, RadianceField};
use crate::math::Aabb;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"MPNF";
const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u8),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub fn save_checkpoint(field: &RadianceField, step: u64, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    let header = serde_json::json!({
        "config": field.config,
        "aabb_min": field.aabb.min,
        "aabb_max": field.aabb.max,
    })
    .to_string();
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    w.write_all(&step.to_le_bytes())?;
    w.write_all(&(field.store.params.len() as u64).to_le_bytes())?;
    for &p in &field.store.params {
        w.write_all(&(p as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(RadianceField, u64), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != VERSION {
        return Err(CheckpointError::BadVersion(version[0]));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: serde_json::Value = serde_json::from_slice(&header)
        .map_err(|e| CheckpointError::Corrupt(format!("header json: {e}")))?;
    let config: FieldConfig = serde_json::from_value(header["config"].clone())
        .map_err(|e| CheckpointError::Corrupt(format!("config: {e}")))?;
    let aabb_min: [f64; 3] = serde_json::from_value(header["aabb_min"].clone())
        .map_err(|e| CheckpointError::Corrupt(format!("aabb: {e}")))?;
    let aabb_max: [f64; 3] = serde_json::from_value(header["aabb_max"].clone())
        .map_err(|e| CheckpointError::Corrupt(format!("aabb: {e}")))?;

    let mut step_b = [0u8; 8];
    r.read_exact(&mut step_b)?;
    let step = u64::from_le_bytes(step_b);
    let mut count_b = [0u8; 8];
    r.read_exact(&mut count_b)?;
    let count = u64::from_le_bytes(count_b) as usize;

    let mut field = RadianceField::new(config, Aabb::new(aabb_min, aabb_max))
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    if field.store.params.len() != count {
        return Err(CheckpointError::Corrupt(format!(
            "parameter count {} does not match config ({})",
            count,
            field.store.params.len()
        )));
    }
    let mut raw = vec![0u8; count * 4];
    r.read_exact(&mut raw)
        .map_err(|_| CheckpointError::Corrupt("truncated parameter array".into()))?;
    for (p, chunk) in field.store.params.iter_mut().zip(raw.chunks_exact(4)) {
        *p = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    }
    Ok((field, step))
}
