//! Versioned binary checkpoint.
//!
//! Layout (little-endian): the 6-byte magic `SCONE1`, a `u32` tensor count,
//! then per tensor a `u32` name length, the UTF-8 name, `u32` rows, `u32`
//! cols and `rows · cols` row-major `f64` values. Normalization constants
//! and `k` are stored as `1 × 1` tensors under the `norm.` prefix.

use std::collections::HashMap;
use std::path::Path;

use super::embedding::{EmbeddingModel, Parameters};
use crate::constellation::NormConstants;
use crate::error::{Error, Result};
use crate::io::{write_atomic, ByteReader};

const MAGIC_PREFIX: &[u8; 5] = b"SCONE";
const VERSION: u8 = b'1';

pub fn model_to_bytes(model: &EmbeddingModel) -> Vec<u8> {
    let tensors = model.params.tensors();
    let scalars = [
        ("norm.k", model.k as f64),
        ("norm.orientation_divisor", model.norm.orientation_divisor),
        ("norm.log_scale_offset", model.norm.log_scale_offset),
        ("norm.log_scale_divisor", model.norm.log_scale_divisor),
    ];
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC_PREFIX);
    out.push(VERSION);
    out.extend_from_slice(&((tensors.len() + scalars.len()) as u32).to_le_bytes());
    let mut put = |name: &str, rows: usize, cols: usize, data: &[f64]| {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for t in &tensors {
        put(&t.name, t.rows, t.cols, t.data);
    }
    for (name, v) in scalars {
        put(name, 1, 1, &[v]);
    }
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<EmbeddingModel> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(6).map_err(|_| Error::CorruptFile("missing magic".into()))?;
    if &magic[..5] != MAGIC_PREFIX {
        return Err(Error::CorruptFile("bad magic".into()));
    }
    if magic[5] != VERSION {
        return Err(Error::VersionMismatch {
            expected: "SCONE1".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let truncated = |_| Error::CorruptFile("truncated checkpoint".into());
    let count = r.u32().map_err(truncated)? as usize;
    let mut named: HashMap<String, (usize, usize, Vec<f64>)> = HashMap::new();
    for _ in 0..count {
        let len = r.u32().map_err(truncated)? as usize;
        let name = std::str::from_utf8(r.take(len).map_err(truncated)?)
            .map_err(|_| Error::CorruptFile("tensor name is not UTF-8".into()))?
            .to_owned();
        let rows = r.u32().map_err(truncated)? as usize;
        let cols = r.u32().map_err(truncated)? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= r.remaining() / 8)
            .ok_or_else(|| Error::CorruptFile(format!("tensor {name} overruns the file")))?;
        let data = (0..n).map(|_| r.f64()).collect::<std::result::Result<Vec<_>, _>>().map_err(truncated)?;
        named.insert(name, (rows, cols, data));
    }
    if r.remaining() != 0 {
        return Err(Error::CorruptFile("trailing bytes after last tensor".into()));
    }

    let mut params = Parameters::random(0).zeros_like();
    let layout: Vec<(String, usize, usize)> = params
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), t.rows, t.cols))
        .collect();
    for ((name, rows, cols), dst) in layout.into_iter().zip(params.tensors_mut()) {
        let (r, c, data) = named
            .remove(&name)
            .ok_or_else(|| Error::CorruptFile(format!("missing tensor {name}")))?;
        if (r, c) != (rows, cols) {
            return Err(Error::CorruptFile(format!(
                "tensor {name} has shape {r}x{c}, expected {rows}x{cols}"
            )));
        }
        dst.copy_from_slice(&data);
    }
    let mut scalar = |name: &str| -> Result<f64> {
        match named.remove(name) {
            Some((1, 1, v)) => Ok(v[0]),
            _ => Err(Error::CorruptFile(format!("missing scalar {name}"))),
        }
    };
    let k = scalar("norm.k")?;
    let norm = NormConstants {
        orientation_divisor: scalar("norm.orientation_divisor")?,
        log_scale_offset: scalar("norm.log_scale_offset")?,
        log_scale_divisor: scalar("norm.log_scale_divisor")?,
    };
    if !(k >= 1.0 && k.fract() == 0.0) {
        return Err(Error::CorruptFile(format!("invalid k {k}")));
    }
    Ok(EmbeddingModel {
        params,
        norm,
        k: k as usize,
    })
}

pub fn save_model(model: &EmbeddingModel, path: &Path) -> Result<()> {
    write_atomic(path, &model_to_bytes(model))
}

pub fn load_model(path: &Path) -> Result<EmbeddingModel> {
    model_from_bytes(&std::fs::read(path)?)
}
