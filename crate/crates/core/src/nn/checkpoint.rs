//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            8 bytes   b"SCOPELOC"
//! version          u32       currently 1
//! config_len       u32
//! config_json      config_len bytes of UTF-8 JSON
//! config_hash      8 bytes   first 8 bytes of sha256(config_json)
//! seed             u64
//! param_count      u32
//! per parameter:
//!   name_len       u32
//!   name           name_len bytes of UTF-8
//!   ndim           u32
//!   dims           ndim x u32
//!   data           product(dims) x f32
//! ```
//!
//! Values are serialized as `f32`; training arithmetic stays in `f64` and is
//! narrowed only at save time.

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use super::tensor::{NnError, Parameter, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SCOPELOC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_json: String,
    pub seed: u64,
    /// Name, shape, and f64-widened values per parameter, in file order.
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
}

pub fn config_hash(config_json: &str) -> [u8; 8] {
    let digest = Sha256::digest(config_json.as_bytes());
    let mut hash = [0u8; 8];
    hash.copy_from_slice(&digest[..8]);
    hash
}

fn io_err(e: std::io::Error) -> NnError {
    NnError::Checkpoint(e.to_string())
}

pub fn save_checkpoint<W: Write>(
    mut w: W,
    config_json: &str,
    seed: u64,
    params: &[&Parameter],
) -> Result<(), NnError> {
    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
    let config_bytes = config_json.as_bytes();
    w.write_all(&(config_bytes.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(config_bytes).map_err(io_err)?;
    w.write_all(&config_hash(config_json)).map_err(io_err)?;
    w.write_all(&seed.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(params.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    for p in params {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name).map_err(io_err)?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes()).map_err(io_err)?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
        }
        for &v in p.value.data() {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

fn read_exact_buf<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>, NnError> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, NnError> {
    let magic = read_exact_buf(&mut r, 8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint(format!(
            "bad magic {:?}, not a checkpoint file",
            &magic[..]
        )));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let config_len = read_u32(&mut r)? as usize;
    let config_bytes = read_exact_buf(&mut r, config_len)?;
    let config_json = String::from_utf8(config_bytes)
        .map_err(|e| NnError::Checkpoint(format!("config is not UTF-8: {e}")))?;
    let stored_hash = read_exact_buf(&mut r, 8)?;
    if stored_hash != config_hash(&config_json) {
        return Err(NnError::Checkpoint(
            "config hash mismatch, file is corrupt".to_string(),
        ));
    }
    let mut seed_buf = [0u8; 8];
    r.read_exact(&mut seed_buf).map_err(io_err)?;
    let seed = u64::from_le_bytes(seed_buf);
    let param_count = read_u32(&mut r)? as usize;
    let mut params = Vec::with_capacity(param_count);
    for _ in 0..param_count {
        let name_len = read_u32(&mut r)? as usize;
        let name = String::from_utf8(read_exact_buf(&mut r, name_len)?)
            .map_err(|e| NnError::Checkpoint(format!("param name is not UTF-8: {e}")))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r)? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = read_exact_buf(&mut r, count * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        params.push((name, shape, data));
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => {
            return Err(NnError::Checkpoint(
                "trailing bytes after last parameter".to_string(),
            ))
        }
        Err(e) => return Err(io_err(e)),
    }
    Ok(Checkpoint {
        config_json,
        seed,
        params,
    })
}

/// Copy loaded values into live parameters, matching by name and shape.
/// Every live parameter must be present in the checkpoint and vice versa.
pub fn restore_params(ckpt: &Checkpoint, params: &mut [&mut Parameter]) -> Result<(), NnError> {
    if ckpt.params.len() != params.len() {
        return Err(NnError::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            ckpt.params.len(),
            params.len()
        )));
    }
    for ((name, shape, data), live) in ckpt.params.iter().zip(params.iter_mut()) {
        if name != &live.name {
            return Err(NnError::Checkpoint(format!(
                "parameter order mismatch: checkpoint has {name}, model expects {}",
                live.name
            )));
        }
        if shape != live.value.shape() {
            return Err(NnError::Checkpoint(format!(
                "shape mismatch for {name}: checkpoint {shape:?}, model {:?}",
                live.value.shape()
            )));
        }
        live.value = Tensor::from_vec(shape, data.clone())?;
        live.zero_grad();
    }
    Ok(())
}
