//! Flat binary storage for parameter arrays: magic, format version, array
//! count, then each array as a length-prefixed run of little-endian f64.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NSCK";
const VERSION: u32 = 1;

pub fn encode_arrays(arrays: &[&[f64]]) -> Vec<u8> {
    let total: usize = arrays.iter().map(|a| 8 + 8 * a.len()).sum();
    let mut out = Vec::with_capacity(16 + total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
    for a in arrays {
        out.extend_from_slice(&(a.len() as u64).to_le_bytes());
        for v in *a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_arrays(bytes: &[u8], path: &str) -> Result<Vec<Vec<f64>>> {
    let bad = |reason: &str| Error::Format {
        path: path.to_string(),
        reason: reason.to_string(),
    };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| bad("truncated checkpoint"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let mut arrays = Vec::new();
    for _ in 0..count {
        let len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let raw = take(
            len.checked_mul(8)
                .ok_or_else(|| bad("array length overflow"))?,
        )?;
        arrays.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        );
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after checkpoint"));
    }
    Ok(arrays)
}

pub fn write_arrays(path: &Path, arrays: &[&[f64]]) -> Result<()> {
    fs::write(path, encode_arrays(arrays))?;
    Ok(())
}

pub fn read_arrays(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path)?;
    decode_arrays(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let a = [1.0, -2.5, f64::MIN_POSITIVE];
        let b: [f64; 0] = [];
        let bytes = encode_arrays(&[&a, &b]);
        assert_eq!(
            decode_arrays(&bytes, "x").unwrap(),
            vec![a.to_vec(), vec![]]
        );
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode_arrays(&[&[1.0, 2.0]]);
        assert!(decode_arrays(&bytes[..bytes.len() - 1], "x").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_arrays(&extra, "x").is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(decode_arrays(&magic, "x").is_err());
    }
}
