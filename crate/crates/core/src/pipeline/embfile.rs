//! `WEMB` embedding files: a fixed header followed by row-major little-endian f32 values.
//!
//! ```text
//! "WEMB" | version u32 (= 1) | rows u32 | dim u32 | dtype u32 (1 = f32) | rows·dim × f32
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"WEMB";
pub const EMBEDDING_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;
const HEADER_LEN: usize = 20;

/// Encodes `m` as f32; fails if any value is not finite after narrowing.
pub fn encode_embeddings(m: &Matrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Format("too many rows".into()))?;
    let dim = u32::try_from(m.cols()).map_err(|_| Error::Format("dimension too large".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    for word in [EMBEDDING_VERSION, rows, dim, DTYPE_F32] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    for (k, &v) in m.as_slice().iter().enumerate() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::NonFinite(format!(
                "value {v} at row {}, column {} does not fit in f32",
                k / m.cols().max(1),
                k % m.cols().max(1)
            )));
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "embedding file has {} bytes, shorter than its header",
            bytes.len()
        )));
    }
    if &bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::Format("not an embedding file (bad magic)".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    let (version, rows, dim, dtype) = (word(0), word(1) as usize, word(2) as usize, word(3));
    if version != EMBEDDING_VERSION {
        return Err(Error::Format(format!(
            "unsupported embedding file version {version} (expected {EMBEDDING_VERSION})"
        )));
    }
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported element type {dtype}")));
    }
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header promises {rows} × {dim} f32 = {expected}",
            payload.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * dim);
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "value at row {}, column {} is not finite",
                k / dim,
                k % dim
            )));
        }
        data.push(f64::from(v));
    }
    Matrix::new(rows, dim, data)
}

pub fn write_embeddings(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    fs::write(path, encode_embeddings(m)?)?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Matrix> {
    decode_embeddings(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = Matrix::from_rows(&[[1.0, -2.5], [0.25, 3.0], [0.0, 1e-3]]).unwrap();
        let bytes = encode_embeddings(&m).unwrap();
        assert_eq!(&bytes[..4], b"WEMB");
        assert_eq!(bytes.len(), 20 + 3 * 2 * 4);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[24..28].try_into().unwrap()), -2.5);
    }

    #[test]
    fn rejects_malformed_files() {
        let m = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let good = encode_embeddings(&m).unwrap();
        assert!(matches!(decode_embeddings(&good[..10]), Err(Error::Format(_))));
        assert!(matches!(decode_embeddings(&good[..good.len() - 1]), Err(Error::Format(_))));
        let mut bad_magic = good.clone();
        bad_magic[1] = b'X';
        assert!(matches!(decode_embeddings(&bad_magic), Err(Error::Format(_))));
        let mut bad_dtype = good.clone();
        bad_dtype[16] = 2;
        assert!(matches!(decode_embeddings(&bad_dtype), Err(Error::Format(_))));
        let mut nan = good;
        nan[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_embeddings(&nan), Err(Error::NonFinite(_))));
        assert!(encode_embeddings(&Matrix::from_rows(&[[1e300]]).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn prop_round_trip_is_bit_exact(
            rows in 0usize..6,
            cols in 1usize..6,
            values in proptest::collection::vec(-1e30f32..1e30f32, 36),
        ) {
            let m = Matrix::from_fn(rows, cols, |i, j| f64::from(values[i * cols + j]));
            let back = decode_embeddings(&encode_embeddings(&m).unwrap()).unwrap();
            prop_assert_eq!(back.shape(), m.shape());
            for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
