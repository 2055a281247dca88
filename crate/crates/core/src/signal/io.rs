//! On-disk dataset layout: `meta.json` plus one little-endian `.rffd` file
//! per split.
//!
//! Split file: magic `RFFD`, version `u32`, record count `u64`, samples per
//! record `u64`; then per record `device_id u32`, `block_id u16`,
//! `snr_db f32`, `true_freq f64`, `true_phase f64` and `M` interleaved
//! `(re, im)` `f32` pairs.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{ComplexSignal, DatasetConfig, DatasetSplit, SplitName, TransmissionRecord};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RFFD";
pub const VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";

/// Manifest entry for one split file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub name: SplitName,
    pub file: String,
    pub record_count: usize,
    pub device_ids: Vec<u32>,
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub signal_len: usize,
    pub config: DatasetConfig,
    pub splits: Vec<SplitManifest>,
}

pub fn split_file_name(name: SplitName) -> String {
    format!("{}.rffd", name.key())
}

/// Encode records into the split file format.
pub fn encode_records(records: &[TransmissionRecord], signal_len: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(24 + records.len() * (26 + 8 * signal_len));
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(signal_len as u64).to_le_bytes());
    for r in records {
        if r.signal.len() != signal_len {
            return Err(Error::shape(format!(
                "record of length {} in a split of length {signal_len}",
                r.signal.len()
            )));
        }
        buf.extend_from_slice(&r.device_id.to_le_bytes());
        buf.extend_from_slice(&r.block_id.to_le_bytes());
        buf.extend_from_slice(&r.snr_db.to_le_bytes());
        buf.extend_from_slice(&r.true_freq_offset.to_le_bytes());
        buf.extend_from_slice(&r.true_phase_offset.to_le_bytes());
        for s in &r.signal.samples {
            buf.extend_from_slice(&(s.re as f32).to_le_bytes());
            buf.extend_from_slice(&(s.im as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| Error::Format {
            path: self.origin.to_string(),
            reason: "truncated".into(),
        })?;
        self.pos = end;
        Ok(chunk.try_into().expect("slice length"))
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

/// Decode a split file; `origin` is only used in error messages.
pub fn decode_records(bytes: &[u8], origin: &str) -> Result<Vec<TransmissionRecord>> {
    let bad = |reason: String| Error::Format {
        path: origin.to_string(),
        reason,
    };
    let mut c = Cursor {
        bytes,
        pos: 0,
        origin,
    };
    if c.take::<4>()? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = c.u64()? as usize;
    let len = c.u64()? as usize;
    let expected = 24 + count * (26 + 8 * len);
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let device_id = c.u32()?;
        let block_id = c.u16()?;
        let snr_db = c.f32()?;
        let true_freq_offset = c.f64()?;
        let true_phase_offset = c.f64()?;
        let mut samples = Vec::with_capacity(len);
        for _ in 0..len {
            let re = c.f32()? as f64;
            let im = c.f32()? as f64;
            samples.push(Complex64::new(re, im));
        }
        out.push(TransmissionRecord {
            signal: ComplexSignal::new(samples, super::DEFAULT_SAMPLE_RATE_HZ),
            device_id,
            block_id,
            snr_db,
            true_freq_offset,
            true_phase_offset,
        });
    }
    Ok(out)
}

pub fn write_split(path: &Path, records: &[TransmissionRecord], signal_len: usize) -> Result<()> {
    let bytes = encode_records(records, signal_len)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<Vec<TransmissionRecord>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_records(&bytes, &path.display().to_string())
}

/// Write every split plus `meta.json` into `dir` (created if missing).
pub fn save_dataset(
    dir: &Path,
    data: &DatasetSplit,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<DatasetMeta> {
    fs::create_dir_all(dir)?;
    let signal_len = cfg.signal_len();
    let mut splits = Vec::new();
    for (name, records) in data.iter() {
        let file = split_file_name(name);
        write_split(&dir.join(&file), records, signal_len)?;
        let mut ids: Vec<u32> = records.iter().map(|r| r.device_id).collect();
        ids.sort_unstable();
        ids.dedup();
        splits.push(SplitManifest {
            name,
            file,
            record_count: records.len(),
            device_ids: ids,
        });
    }
    let meta = DatasetMeta {
        seed,
        signal_len,
        config: cfg.clone(),
        splits,
    };
    fs::write(
        dir.join(META_FILE),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    Ok(meta)
}

pub fn load_meta(dir: &Path) -> Result<DatasetMeta> {
    let text = fs::read_to_string(dir.join(META_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

/// Load one split; `Ok(None)` if the dataset does not contain it.
pub fn load_split(dir: &Path, name: SplitName) -> Result<Option<Vec<TransmissionRecord>>> {
    let meta = load_meta(dir)?;
    match meta.splits.iter().find(|s| s.name == name) {
        None => Ok(None),
        Some(entry) => {
            let path = dir.join(&entry.file);
            if !path.exists() {
                return Ok(None);
            }
            let records = read_split(&path)?;
            if records.len() != entry.record_count {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    reason: format!(
                        "manifest lists {} records, file has {}",
                        entry.record_count,
                        records.len()
                    ),
                });
            }
            Ok(Some(records))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: u32) -> TransmissionRecord {
        TransmissionRecord {
            signal: ComplexSignal::new(
                vec![Complex64::new(0.5, -0.25), Complex64::new(1.0, 2.0)],
                super::super::DEFAULT_SAMPLE_RATE_HZ,
            ),
            device_id: id,
            block_id: 7,
            snr_db: 30.0,
            true_freq_offset: 1.25e-4,
            true_phase_offset: 0.375,
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = encode_records(&[record(3)], 2).unwrap();
        assert_eq!(&bytes[..4], b"RFFD");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &1u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &2u64.to_le_bytes());
        assert_eq!(&bytes[24..28], &3u32.to_le_bytes());
        assert_eq!(&bytes[28..30], &7u16.to_le_bytes());
        assert_eq!(&bytes[30..34], &30f32.to_le_bytes());
        assert_eq!(bytes.len(), 24 + 26 + 16);
    }

    #[test]
    fn decode_rejects_corruption() {
        let mut bytes = encode_records(&[record(1), record(2)], 2).unwrap();
        assert_eq!(
            decode_records(&bytes, "mem").unwrap(),
            vec![record(1), record(2)]
        );
        bytes.pop();
        assert!(decode_records(&bytes, "mem").is_err());
        let mut bytes = encode_records(&[record(1)], 2).unwrap();
        bytes[0] = b'X';
        assert!(decode_records(&bytes, "mem").is_err());
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(encode_records(&[record(1)], 3).is_err());
    }
}
