//! `EMB1` embedding files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset 0   4 bytes  magic "EMB1"
//! offset 4   u32      N (rows)
//! offset 8   u32      d (dim)
//! offset 12  N*d f32  row-major payload
//! ```
//!
//! Row identifiers live in an optional sidecar `<path>.ids`, one UTF-8 id per
//! line. Files must end exactly at the payload.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"EMB1";
const HEADER_LEN: usize = 12;

/// What the caller needs from the loaded rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// Return the rows as stored.
    #[default]
    AsStored,
    /// Normalize every row; zero rows are rejected.
    Normalized,
}

pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

pub fn encode<T: Scalar>(m: &EmbeddingMatrix<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    for v in m.as_slice() {
        let f = v.to_f32().expect("finite values fit in f32");
        out.extend_from_slice(&f.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingMatrix<f32>> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(Error::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::invalid(format!("header dimensions {rows}x{dim} overflow")))?;
    if bytes.len() < expected {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes(bytes.len() - expected));
    }
    let data: Vec<f32> =
        bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    EmbeddingMatrix::new(rows, dim, data)
}

pub fn load_embeddings(path: &Path, mode: LoadMode) -> Result<EmbeddingMatrix<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut m = decode(&bytes)?;
    let sidecar = ids_path(path);
    if sidecar.exists() {
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let ids: Vec<String> = text.lines().map(str::to_owned).collect();
        m = m.with_ids(ids)?;
    }
    match mode {
        LoadMode::AsStored => Ok(m),
        LoadMode::Normalized => m.normalize_rows().map_err(|e| match e {
            Error::ZeroNormRow(r) => Error::NonNormalizable(r),
            other => other,
        }),
    }
}

pub fn save_embeddings<T: Scalar>(path: &Path, m: &EmbeddingMatrix<T>) -> Result<()> {
    fs::write(path, encode(m)).map_err(|e| Error::io(path, e))?;
    if let Some(ids) = m.ids() {
        let sidecar = ids_path(path);
        let mut f = fs::File::create(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        for id in ids {
            writeln!(f, "{id}").map_err(|e| Error::io(&sidecar, e))?;
        }
    }
    Ok(())
}
