//! Versioned binary checkpoint format.
//!
//! Layout: magic "NNCKPT1\0" (8 bytes), u32 LE tensor count, then per tensor:
//! u16 LE name length, UTF-8 name, u8 rank, rank x u32 LE dims, and
//! dims-product x f32 LE values. Values are stored as f32 regardless of the
//! compute type.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"NNCKPT1\0";

/// Serialize named tensors in the given order.
pub fn encode_checkpoint<S: Scalar>(tensors: &[(String, Tensor<S>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::Checkpoint("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        let name_len = u16::try_from(name_bytes.len())
            .map_err(|_| Error::Checkpoint(format!("tensor name too long: {name:?}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name_bytes);
        let dims = tensor.shape();
        out.push(dims.rank() as u8);
        for &d in dims.dims() {
            let d = u32::try_from(d)
                .map_err(|_| Error::Checkpoint(format!("dim too large in {name:?}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in tensor.data().iter() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Write named tensors to `path`.
pub fn save_checkpoint<S: Scalar>(tensors: &[(String, Tensor<S>)], path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() - *pos < n {
        return Err(Error::Checkpoint(format!(
            "truncated while reading {what} at byte {}",
            *pos
        )));
    }
    let slice = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(slice)
}

/// Decode every tensor as (name, dims, f32 values).
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>> {
    let mut pos = 0usize;
    let magic = take(bytes, &mut pos, 8, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic/version".into()));
    }
    let count = u32::from_le_bytes(take(bytes, &mut pos, 4, "tensor count")?.try_into().unwrap());
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count {
        let name_len =
            u16::from_le_bytes(take(bytes, &mut pos, 2, "name length")?.try_into().unwrap())
                as usize;
        let name = String::from_utf8(take(bytes, &mut pos, name_len, "name")?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("tensor {i}: name is not UTF-8")))?;
        let rank = take(bytes, &mut pos, 1, "rank")?[0] as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Checkpoint(format!("tensor {name:?}: bad rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u32::from_le_bytes(take(bytes, &mut pos, 4, "dim")?.try_into().unwrap());
            dims.push(d as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = take(bytes, &mut pos, numel * 4, &format!("values of {name:?}"))?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, dims, values));
    }
    if pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(out)
}

/// Read all tensors of a checkpoint file.
pub fn load_checkpoint_raw(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Load a checkpoint into an existing set of named tensors, verifying that
/// names, order and shapes agree exactly.
pub fn load_checkpoint<S: Scalar>(path: &Path, target: &[(String, Tensor<S>)]) -> Result<()> {
    let entries = load_checkpoint_raw(path)?;
    if entries.len() != target.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {}",
            entries.len(),
            target.len()
        )));
    }
    for ((name, dims, values), (want_name, tensor)) in entries.iter().zip(target) {
        if name != want_name {
            return Err(Error::Checkpoint(format!(
                "tensor name mismatch: checkpoint has {name:?}, model expects {want_name:?}"
            )));
        }
        if dims != tensor.shape().dims() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {name:?}: checkpoint {dims:?}, model {:?}",
                tensor.shape().dims()
            )));
        }
        let cast: Vec<S> = values.iter().map(|&v| S::from_f64(v as f64)).collect();
        tensor.copy_from(&cast)?;
    }
    Ok(())
}
