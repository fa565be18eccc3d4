//! Binary dump formats for layer stacks (`TGEO`) and logits (`TGLO`).
//!
//! Both formats are little-endian with a 4-byte magic and a `u32` version.
//!
//! ```text
//! TGEO: "TGEO" | version=1 | n_layers | n_tokens | dim
//!       | f32[n_layers * n_tokens * dim]        (layer-major, row-major)
//! TGLO: "TGLO" | version=1 | n_tokens | vocab_size
//!       | f32[n_tokens * vocab_size]            (logits, row-major)
//!       | f32[n_tokens]                         (true-next-token log-likelihood)
//! ```
//!
//! Files are read whole; a payload that is shorter or longer than the header
//! implies is rejected.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::types::{LayerStack, LogitRecord, PointCloud, ShapeError};

pub const TGEO_MAGIC: [u8; 4] = *b"TGEO";
pub const TGLO_MAGIC: [u8; 4] = *b"TGLO";
pub const FORMAT_VERSION: u32 = 1;

const TGEO_HEADER_LEN: usize = 20;
const TGLO_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("header truncated: {0} bytes")]
    TruncatedHeader(usize),
    #[error("header declares a zero or overflowing shape")]
    BadShape,
    #[error("payload is {actual} bytes, header implies {expected}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("non-finite value at layer {layer}, token {token}, column {col}")]
    NonFinite { layer: usize, token: usize, col: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

impl FormatError {
    /// Stable numeric code per error kind, for logs and error reports.
    pub fn code(&self) -> u32 {
        match self {
            FormatError::Io(_) => 1,
            FormatError::BadMagic { .. } => 2,
            FormatError::UnsupportedVersion(_) => 3,
            FormatError::TruncatedHeader(_) => 4,
            FormatError::BadShape => 5,
            FormatError::PayloadLength { .. } => 6,
            FormatError::NonFinite { .. } => 7,
            FormatError::Shape(_) => 8,
        }
    }
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn check_header(bytes: &[u8], magic: [u8; 4], header_len: usize) -> Result<(), FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::TruncatedHeader(bytes.len()));
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != magic {
        return Err(FormatError::BadMagic { found, expected: magic });
    }
    if bytes.len() < header_len {
        return Err(FormatError::TruncatedHeader(bytes.len()));
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    Ok(())
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn product(dims: &[u32]) -> Option<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .filter(|&n| n > 0)
}

pub fn decode_layerstack(prompt_id: &str, bytes: &[u8]) -> Result<LayerStack, FormatError> {
    check_header(bytes, TGEO_MAGIC, TGEO_HEADER_LEN)?;
    let n_layers = u32_at(bytes, 8) as usize;
    let n_tokens = u32_at(bytes, 12) as usize;
    let dim = u32_at(bytes, 16) as usize;
    let count = product(&[n_layers as u32, n_tokens as u32, dim as u32]).ok_or(FormatError::BadShape)?;
    let expected = count.checked_mul(4).ok_or(FormatError::BadShape)?;
    let payload = &bytes[TGEO_HEADER_LEN..];
    if payload.len() != expected {
        return Err(FormatError::PayloadLength {
            expected,
            actual: payload.len(),
        });
    }
    let values = decode_f32(payload);
    let per_layer = n_tokens * dim;
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite {
            layer: pos / per_layer,
            token: (pos % per_layer) / dim,
            col: pos % dim,
        });
    }
    let layers = values
        .chunks_exact(per_layer)
        .map(|chunk| PointCloud::new(n_tokens, dim, chunk.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LayerStack::new(prompt_id, layers)?)
}

pub fn encode_layerstack(stack: &LayerStack) -> Vec<u8> {
    let count = stack.n_layers() * stack.n_tokens() * stack.dim();
    let mut out = Vec::with_capacity(TGEO_HEADER_LEN + 4 * count);
    out.extend_from_slice(&TGEO_MAGIC);
    for v in [
        FORMAT_VERSION,
        stack.n_layers() as u32,
        stack.n_tokens() as u32,
        stack.dim() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for layer in stack.layers() {
        for v in layer.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a `TGEO` file. The prompt id is taken from the file stem.
pub fn read_layerstack(path: impl AsRef<Path>) -> Result<LayerStack, FormatError> {
    let path = path.as_ref();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_layerstack_as(path, &id)
}

pub fn read_layerstack_as(path: impl AsRef<Path>, prompt_id: &str) -> Result<LayerStack, FormatError> {
    let bytes = fs::read(path)?;
    decode_layerstack(prompt_id, &bytes)
}

pub fn write_layerstack(stack: &LayerStack, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_layerstack(stack))?;
    Ok(())
}

pub fn decode_logits(bytes: &[u8]) -> Result<LogitRecord, FormatError> {
    check_header(bytes, TGLO_MAGIC, TGLO_HEADER_LEN)?;
    let n_tokens = u32_at(bytes, 8) as usize;
    let vocab = u32_at(bytes, 12) as usize;
    let n_logits = product(&[n_tokens as u32, vocab as u32]).ok_or(FormatError::BadShape)?;
    let expected = n_logits
        .checked_add(n_tokens)
        .and_then(|n| n.checked_mul(4))
        .ok_or(FormatError::BadShape)?;
    let payload = &bytes[TGLO_HEADER_LEN..];
    if payload.len() != expected {
        return Err(FormatError::PayloadLength {
            expected,
            actual: payload.len(),
        });
    }
    let logits = decode_f32(&payload[..4 * n_logits]);
    let loglik = decode_f32(&payload[4 * n_logits..]);
    Ok(LogitRecord::new(n_tokens, vocab, logits, loglik)?)
}

pub fn encode_logits(rec: &LogitRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(TGLO_HEADER_LEN + 4 * (rec.logits().len() + rec.n_tokens()));
    out.extend_from_slice(&TGLO_MAGIC);
    for v in [FORMAT_VERSION, rec.n_tokens() as u32, rec.vocab_size() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in rec.logits().iter().chain(rec.true_next_loglik()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_logits(path: impl AsRef<Path>) -> Result<LogitRecord, FormatError> {
    decode_logits(&fs::read(path)?)
}

pub fn write_logits(rec: &LogitRecord, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_logits(rec))?;
    Ok(())
}
