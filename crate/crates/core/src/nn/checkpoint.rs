//! Checkpoint file format for parameter tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"CBCK"
//! version u32 (currently 1)
//! count   u32
//! then per tensor, in order:
//!   name_len u16, name utf-8 bytes
//!   ndim     u8,  dims u32 x ndim
//!   data     f32-le x prod(dims)
//! ```
//!
//! The checkpoint checksum is FNV-1a 64 over the concatenated f32 payloads
//! in file order, matching [`crate::nn::fnv1a64_f32`] over in-memory
//! parameters visited in construction order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::layers::Layer;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CBCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn save_tensors(path: &Path, tensors: &[TensorEntry]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(t.shape.len() as u8);
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<TensorEntry>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor + n > bytes.len() {
            return Err(corrupt("truncated file"));
        }
        let slice = &bytes[cursor..cursor + n];
        cursor += n;
        Ok(slice)
    };

    if take(4)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| corrupt("tensor name is not utf-8"))?;
        let ndim = take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let raw = take(len * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(TensorEntry { name, shape, data });
    }
    Ok(tensors)
}

/// Save every parameter of `net`, in visitation (construction) order.
pub fn save_params(path: &Path, net: &dyn Layer) -> Result<()> {
    let mut tensors = Vec::new();
    net.for_each_param_ref(&mut |p| {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            data: p.data.clone(),
        });
    });
    save_tensors(path, &tensors)
}

/// Load a checkpoint into `net`, matching tensors by name. Every parameter
/// of the net must be present with the right shape; extra tensors in the
/// file are an error too, so a checkpoint pins the architecture exactly.
pub fn load_params(path: &Path, net: &mut dyn Layer) -> Result<()> {
    let tensors = load_tensors(path)?;
    let mut by_name: std::collections::HashMap<String, TensorEntry> =
        tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let mut missing = Vec::new();
    let mut mismatched = Vec::new();
    net.for_each_param(&mut |p| match by_name.remove(&p.name) {
        Some(entry) => {
            if entry.shape == p.shape {
                p.data = entry.data;
            } else {
                mismatched.push(format!("{} ({:?} vs {:?})", p.name, entry.shape, p.shape));
            }
        }
        None => missing.push(p.name.clone()),
    });
    if !missing.is_empty() || !mismatched.is_empty() || !by_name.is_empty() {
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("missing tensors: {}", missing.join(", ")));
        }
        if !mismatched.is_empty() {
            parts.push(format!("shape mismatch: {}", mismatched.join(", ")));
        }
        if !by_name.is_empty() {
            let extra: Vec<String> = by_name.keys().cloned().collect();
            parts.push(format!("unexpected tensors: {}", extra.join(", ")));
        }
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: parts.join("; "),
        });
    }
    Ok(())
}

/// FNV-1a 64 over the f32 payloads stored in the file, in file order.
pub fn file_checksum(path: &Path) -> Result<u64> {
    let tensors = load_tensors(path)?;
    Ok(super::fnv1a64_f32(tensors.iter().map(|t| &t.data)))
}

/// Same digest over in-memory parameters, in visitation order.
pub fn params_checksum(net: &dyn Layer) -> u64 {
    let mut chunks: Vec<Vec<f32>> = Vec::new();
    net.for_each_param_ref(&mut |p| chunks.push(p.data.clone()));
    super::fnv1a64_f32(chunks.iter())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Sequential};
    use crate::rng::SplitMix64;

    #[test]
    fn roundtrip_preserves_params_and_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut rng = SplitMix64::new(77);
        let net = Sequential::new(vec![
            Box::new(Dense::new("a", 4, 3, &mut rng)),
            Box::new(Dense::new("b", 3, 1, &mut rng)),
        ]);
        save_params(&path, &net).unwrap();

        let mut other = Sequential::new(vec![
            Box::new(Dense::new("a", 4, 3, &mut SplitMix64::new(1))),
            Box::new(Dense::new("b", 3, 1, &mut SplitMix64::new(2))),
        ]);
        assert_ne!(params_checksum(&net), params_checksum(&other));
        load_params(&path, &mut other).unwrap();
        assert_eq!(params_checksum(&net), params_checksum(&other));
        assert_eq!(file_checksum(&path).unwrap(), params_checksum(&net));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut rng = SplitMix64::new(77);
        let net = Sequential::new(vec![Box::new(Dense::new("a", 4, 3, &mut rng))]);
        save_params(&path, &net).unwrap();
        let mut wrong = Sequential::new(vec![Box::new(Dense::new("a", 5, 3, &mut rng))]);
        let err = load_params(&path, &mut wrong).unwrap_err();
        assert!(err.to_string().contains("shape mismatch"), "{err}");
    }
}
