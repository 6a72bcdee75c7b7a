//! Flat binary container for a [`SegmentTensor`].
//!
//! All integers little-endian:
//!
//! ```text
//! magic        8 bytes  "OSATNSR1"
//! n, seq_len, channels   3 x u64
//! values       n * seq_len * channels x f32, row-major (n, t, c)
//! labels       n x u8 (class index)
//! id table     u64 count, then per id: u32 byte length + UTF-8 bytes
//! row ids      n x u32 index into the id table
//! provenance   u64 byte length + UTF-8 text
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::SegmentTensor;
use crate::cohort::SeverityLabel;

pub const TENSOR_MAGIC: &[u8; 8] = b"OSATNSR1";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a segment tensor file (bad magic)")]
    BadMagic,
    #[error("tensor file truncated at byte {0}")]
    Truncated(usize),
    #[error("invalid tensor file: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode_tensor(tensor: &SegmentTensor, provenance: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 4 * tensor.values().len() + 5 * tensor.len());
    out.extend_from_slice(TENSOR_MAGIC);
    for d in [tensor.len(), tensor.seq_len(), tensor.channels()] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in tensor.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(tensor.labels().iter().map(|l| l.index() as u8));

    let mut table: Vec<&str> = Vec::new();
    let mut rows = Vec::with_capacity(tensor.len());
    for id in tensor.subject_ids() {
        let idx = match table.iter().position(|t| *t == id) {
            Some(i) => i,
            None => {
                table.push(id);
                table.len() - 1
            }
        };
        rows.push(idx as u32);
    }
    out.extend_from_slice(&(table.len() as u64).to_le_bytes());
    for id in &table {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    for r in rows {
        out.extend_from_slice(&r.to_le_bytes());
    }
    out.extend_from_slice(&(provenance.len() as u64).to_le_bytes());
    out.extend_from_slice(provenance.as_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(ContainerError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize, ContainerError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn u32(&mut self) -> Result<usize, ContainerError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<(SegmentTensor, String), ContainerError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != TENSOR_MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let (n, seq_len, channels) = (r.u64()?, r.u64()?, r.u64()?);
    let count = n
        .checked_mul(seq_len)
        .and_then(|x| x.checked_mul(channels))
        .ok_or_else(|| ContainerError::Invalid("dimension overflow".into()))?;
    let values = r
        .take(count.checked_mul(4).ok_or(ContainerError::Truncated(r.pos))?)?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let labels = r
        .take(n)?
        .iter()
        .map(|&b| {
            SeverityLabel::from_index(b as usize)
                .ok_or_else(|| ContainerError::Invalid(format!("label byte {b}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ids = r.u64()?;
    let mut table = Vec::new();
    for _ in 0..ids {
        let len = r.u32()?;
        let s = std::str::from_utf8(r.take(len)?)
            .map_err(|e| ContainerError::Invalid(format!("subject id: {e}")))?;
        table.push(s.to_string());
    }
    let mut subject_ids = Vec::with_capacity(n);
    for _ in 0..n {
        let i = r.u32()?;
        let id = table
            .get(i)
            .ok_or_else(|| ContainerError::Invalid(format!("subject index {i}")))?;
        subject_ids.push(id.clone());
    }
    let plen = r.u64()?;
    let provenance = String::from_utf8(r.take(plen)?.to_vec())
        .map_err(|e| ContainerError::Invalid(format!("provenance: {e}")))?;
    let tensor = SegmentTensor::from_parts(values, labels, subject_ids, seq_len, channels)
        .ok_or_else(|| ContainerError::Invalid("empty or inconsistent dimensions".into()))?;
    Ok((tensor, provenance))
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &SegmentTensor, provenance: &str) -> Result<(), ContainerError> {
    fs::write(path, encode_tensor(tensor, provenance))?;
    Ok(())
}

/// Returns the tensor and its provenance text.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<(SegmentTensor, String), ContainerError> {
    decode_tensor(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SegmentTensor {
        SegmentTensor::from_parts(
            (0..24).map(|v| v as f32 * 0.5 - 3.0).collect(),
            vec![SeverityLabel::Normal, SeverityLabel::Severe, SeverityLabel::Severe],
            vec!["a".into(), "bb".into(), "bb".into()],
            4,
            2,
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let t = sample();
        let bytes = encode_tensor(&t, "group = \"ecg\"\n");
        let (back, prov) = decode_tensor(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(prov, "group = \"ecg\"\n");
    }

    #[test]
    fn layout_is_fixed() {
        let bytes = encode_tensor(&sample(), "");
        assert_eq!(&bytes[..8], b"OSATNSR1");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[32..36].try_into().unwrap()), -3.0);
        let labels_at = 32 + 24 * 4;
        assert_eq!(&bytes[labels_at..labels_at + 3], &[0, 3, 3]);
        // two distinct ids, three rows, empty provenance
        let tail = 8 + (4 + 1) + (4 + 2) + 3 * 4 + 8;
        assert_eq!(bytes.len(), labels_at + 3 + tail);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = encode_tensor(&sample(), "x");
        assert!(matches!(decode_tensor(b"NOTATENSOR......"), Err(ContainerError::BadMagic)));
        assert!(matches!(
            decode_tensor(&bytes[..bytes.len() - 1]),
            Err(ContainerError::Truncated(_))
        ));
        let mut bad = bytes.clone();
        bad[32 + 24 * 4] = 9;
        assert!(matches!(decode_tensor(&bad), Err(ContainerError::Invalid(_))));
    }
}
