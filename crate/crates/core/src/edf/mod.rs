//! European Data Format (EDF) reader and writer.
//!
//! Layout: a 256-byte fixed header, then 256 bytes of per-signal header per
//! signal (each field stored column-wise for all signals), then data records.
//! Each record holds `samples_per_record` little-endian `i16` values for
//! signal 0, then signal 1, and so on. Header text is space-padded ASCII.
//!
//! Only plain EDF is handled; EDF+ annotation channels are read as ordinary
//! signals and BDF is rejected by the version check.

mod writer;

pub use writer::{write_edf, RecordingInfo};

use std::fs;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use thiserror::Error;

pub const FIXED_HEADER_BYTES: usize = 256;
pub const SIGNAL_HEADER_BYTES: usize = 256;

#[derive(Debug, Error)]
pub enum EdfError {
    #[error("truncated file: need {needed} bytes, data ends at byte offset {actual}")]
    Truncated { needed: usize, actual: usize },
    #[error("invalid {field} at byte offset {offset}: {value:?}")]
    InvalidField {
        field: &'static str,
        offset: usize,
        value: String,
    },
    #[error("header size field says {declared} bytes but {num_signals} signals require {expected}")]
    HeaderSizeMismatch {
        declared: usize,
        expected: usize,
        num_signals: usize,
    },
    #[error("signal {index}: {reason}")]
    InvalidSignal { index: usize, reason: String },
    #[error("signal index {index} out of range ({num_signals} signals)")]
    SignalIndex { index: usize, num_signals: usize },
    #[error("field {field} cannot hold {value:?} in {width} characters")]
    FieldOverflow {
        field: &'static str,
        value: String,
        width: usize,
    },
    #[error("signal {index} has {actual} samples, expected {expected}")]
    SampleCount {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EdfError>;

/// Decoded fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start: NaiveDateTime,
    pub header_bytes: usize,
    /// Record count. When the file declares `-1` this is resolved from the
    /// file size and `records_declared_unknown` is set.
    pub num_records: usize,
    pub records_declared_unknown: bool,
    /// Seconds per data record.
    pub record_duration: f64,
    pub num_signals: usize,
    /// Header fields that contained bytes >= 0x80 (replaced with `?`).
    pub non_ascii_fields: Vec<&'static str>,
}

impl EdfHeader {
    pub fn duration_secs(&self) -> f64 {
        self.num_records as f64 * self.record_duration
    }
}

/// One per-signal header.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
}

impl SignalSpec {
    pub fn sampling_rate(&self, record_duration: f64) -> f64 {
        self.samples_per_record as f64 / record_duration
    }

    /// Physical units per digital step.
    pub fn resolution(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64
    }

    pub fn to_physical(&self, digital: i32) -> f64 {
        self.physical_min + (digital - self.digital_min) as f64 * self.resolution()
    }

    pub(crate) fn validate(&self, index: usize) -> Result<()> {
        let bad = |reason: String| Err(EdfError::InvalidSignal { index, reason });
        if !(self.physical_min.is_finite() && self.physical_max.is_finite()) {
            return bad("non-finite physical range".into());
        }
        if self.physical_max == self.physical_min {
            return bad(format!("physical_min == physical_max == {}", self.physical_min));
        }
        if self.digital_max == self.digital_min {
            return bad(format!("digital_min == digital_max == {}", self.digital_min));
        }
        let i16_range = i16::MIN as i32..=i16::MAX as i32;
        if !i16_range.contains(&self.digital_min) || !i16_range.contains(&self.digital_max) {
            return bad(format!(
                "digital range [{}, {}] exceeds 16 bits",
                self.digital_min, self.digital_max
            ));
        }
        if self.samples_per_record == 0 {
            return bad("zero samples per record".into());
        }
        Ok(())
    }
}

/// One channel in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrace {
    pub label: String,
    pub sampling_rate: f64,
    pub samples: Vec<f64>,
}

impl SignalTrace {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sampling_rate
    }
}

/// A decoded signal plus the number of out-of-range digital samples that
/// were clamped into `[digital_min, digital_max]`.
#[derive(Debug, Clone)]
pub struct SignalRead {
    pub trace: SignalTrace,
    pub clamped: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    non_ascii: Vec<&'static str>,
}

impl<'a> Cursor<'a> {
    fn text(&mut self, field: &'static str, offset: usize, width: usize) -> String {
        let raw = &self.bytes[offset..offset + width];
        let mut flagged = false;
        let s: String = raw
            .iter()
            .map(|&b| {
                if b >= 0x80 {
                    flagged = true;
                    '?'
                } else {
                    b as char
                }
            })
            .collect();
        if flagged && !self.non_ascii.contains(&field) {
            self.non_ascii.push(field);
        }
        s.trim().to_string()
    }

    fn number<T: std::str::FromStr>(
        &mut self,
        field: &'static str,
        offset: usize,
        width: usize,
    ) -> Result<T> {
        let s = self.text(field, offset, width);
        s.parse().map_err(|_| EdfError::InvalidField {
            field,
            offset,
            value: s,
        })
    }
}

fn parse_start(date: &str, time: &str, offset: usize) -> Result<NaiveDateTime> {
    let parts = |s: &str| -> Option<[u32; 3]> {
        let v: Vec<u32> = s.split('.').map(|p| p.parse().ok()).collect::<Option<_>>()?;
        v.try_into().ok()
    };
    let [d, m, y] = parts(date).ok_or_else(|| EdfError::InvalidField {
        field: "start date",
        offset,
        value: date.to_string(),
    })?;
    // EDF clipping date: yy 85..=99 is 19yy, otherwise 20yy.
    let year = if y >= 85 { 1900 + y } else { 2000 + y } as i32;
    let date_ok = NaiveDate::from_ymd_opt(year, m, d);
    let time_ok = parts(time).and_then(|[h, mi, s]| NaiveTime::from_hms_opt(h, mi, s));
    match (date_ok, time_ok) {
        (Some(d), Some(t)) => Ok(NaiveDateTime::new(d, t)),
        (None, _) => Err(EdfError::InvalidField {
            field: "start date",
            offset,
            value: date.to_string(),
        }),
        (_, None) => Err(EdfError::InvalidField {
            field: "start time",
            offset: offset + 8,
            value: time.to_string(),
        }),
    }
}

/// Decode the fixed header and every signal header.
///
/// `bytes` may be the whole file or just the header; when it is the whole
/// file a declared record count of `-1` is resolved from its length.
pub fn parse_header(bytes: &[u8]) -> Result<(EdfHeader, Vec<SignalSpec>)> {
    if bytes.len() < FIXED_HEADER_BYTES {
        return Err(EdfError::Truncated {
            needed: FIXED_HEADER_BYTES,
            actual: bytes.len(),
        });
    }
    let mut c = Cursor {
        bytes,
        non_ascii: Vec::new(),
    };
    let version = c.text("version", 0, 8);
    if version != "0" {
        return Err(EdfError::InvalidField {
            field: "version",
            offset: 0,
            value: version,
        });
    }
    let patient_id = c.text("patient id", 8, 80);
    let recording_id = c.text("recording id", 88, 80);
    let date = c.text("start date", 168, 8);
    let time = c.text("start time", 176, 8);
    let start = parse_start(&date, &time, 168)?;
    let header_bytes: usize = c.number("header bytes", 184, 8)?;
    let declared_records: i64 = c.number("number of records", 236, 8)?;
    let record_duration: f64 = c.number("record duration", 244, 8)?;
    let num_signals: usize = c.number("number of signals", 252, 4)?;

    if num_signals == 0 {
        return Err(EdfError::InvalidField {
            field: "number of signals",
            offset: 252,
            value: "0".into(),
        });
    }
    if !(record_duration.is_finite() && record_duration > 0.0) {
        return Err(EdfError::InvalidField {
            field: "record duration",
            offset: 244,
            value: record_duration.to_string(),
        });
    }
    if declared_records < -1 {
        return Err(EdfError::InvalidField {
            field: "number of records",
            offset: 236,
            value: declared_records.to_string(),
        });
    }
    let expected = FIXED_HEADER_BYTES + SIGNAL_HEADER_BYTES * num_signals;
    if header_bytes != expected {
        return Err(EdfError::HeaderSizeMismatch {
            declared: header_bytes,
            expected,
            num_signals,
        });
    }
    if bytes.len() < expected {
        return Err(EdfError::Truncated {
            needed: expected,
            actual: bytes.len(),
        });
    }

    let ns = num_signals;
    // Column-wise field blocks: (width, start offset) for each field.
    let mut offset = FIXED_HEADER_BYTES;
    let mut block = |width: usize| {
        let start = offset;
        offset += width * ns;
        start
    };
    let label_at = block(16);
    let transducer_at = block(80);
    let dim_at = block(8);
    let pmin_at = block(8);
    let pmax_at = block(8);
    let dmin_at = block(8);
    let dmax_at = block(8);
    let prefilter_at = block(80);
    let spr_at = block(8);

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let spec = SignalSpec {
            label: c.text("label", label_at + 16 * i, 16),
            transducer: c.text("transducer", transducer_at + 80 * i, 80),
            physical_dimension: c.text("physical dimension", dim_at + 8 * i, 8),
            physical_min: c.number("physical minimum", pmin_at + 8 * i, 8)?,
            physical_max: c.number("physical maximum", pmax_at + 8 * i, 8)?,
            digital_min: c.number("digital minimum", dmin_at + 8 * i, 8)?,
            digital_max: c.number("digital maximum", dmax_at + 8 * i, 8)?,
            prefiltering: c.text("prefiltering", prefilter_at + 80 * i, 80),
            samples_per_record: c.number("samples per record", spr_at + 8 * i, 8)?,
        };
        spec.validate(i)?;
        signals.push(spec);
    }

    let record_bytes = record_bytes(&signals);
    let (num_records, records_declared_unknown) = if declared_records == -1 {
        ((bytes.len() - header_bytes) / record_bytes, true)
    } else {
        (declared_records as usize, false)
    };

    let header = EdfHeader {
        version,
        patient_id,
        recording_id,
        start,
        header_bytes,
        num_records,
        records_declared_unknown,
        record_duration,
        num_signals,
        non_ascii_fields: c.non_ascii,
    };
    Ok((header, signals))
}

fn record_bytes(signals: &[SignalSpec]) -> usize {
    signals.iter().map(|s| 2 * s.samples_per_record).sum()
}

/// Decode signal `index` to physical units, concatenating all records.
pub fn read_signal(
    bytes: &[u8],
    header: &EdfHeader,
    signals: &[SignalSpec],
    index: usize,
) -> Result<SignalRead> {
    let spec = signals.get(index).ok_or(EdfError::SignalIndex {
        index,
        num_signals: signals.len(),
    })?;
    let per_record = record_bytes(signals);
    let needed = header.header_bytes + header.num_records * per_record;
    if bytes.len() < needed {
        return Err(EdfError::Truncated {
            needed,
            actual: bytes.len(),
        });
    }
    let within = 2 * signals[..index]
        .iter()
        .map(|s| s.samples_per_record)
        .sum::<usize>();
    let spr = spec.samples_per_record;
    let scale = spec.resolution();
    let (dmin, dmax) = (
        spec.digital_min.min(spec.digital_max),
        spec.digital_min.max(spec.digital_max),
    );

    let mut samples = Vec::with_capacity(header.num_records * spr);
    let mut clamped = 0usize;
    for r in 0..header.num_records {
        let start = header.header_bytes + r * per_record + within;
        for pair in bytes[start..start + 2 * spr].chunks_exact(2) {
            let raw = i16::from_le_bytes([pair[0], pair[1]]) as i32;
            let d = raw.clamp(dmin, dmax);
            if d != raw {
                clamped += 1;
            }
            samples.push(spec.physical_min + (d - spec.digital_min) as f64 * scale);
        }
    }
    if clamped > 0 {
        log::warn!(
            "signal {:?}: {clamped} samples outside digital range clamped",
            spec.label
        );
    }
    Ok(SignalRead {
        trace: SignalTrace {
            label: spec.label.clone(),
            sampling_rate: spec.sampling_rate(header.record_duration),
            samples,
        },
        clamped,
    })
}

/// A whole EDF file held in memory.
#[derive(Debug, Clone)]
pub struct EdfFile {
    bytes: Vec<u8>,
    pub header: EdfHeader,
    pub signals: Vec<SignalSpec>,
}

impl EdfFile {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        let (header, signals) = parse_header(&bytes)?;
        let needed = header.header_bytes + header.num_records * record_bytes(&signals);
        if bytes.len() < needed {
            return Err(EdfError::Truncated {
                needed,
                actual: bytes.len(),
            });
        }
        Ok(Self {
            bytes,
            header,
            signals,
        })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(fs::read(path)?)
    }

    pub fn read_signal(&self, index: usize) -> Result<SignalRead> {
        read_signal(&self.bytes, &self.header, &self.signals, index)
    }

    /// Index of the first signal whose label matches, ignoring case and
    /// surrounding whitespace.
    pub fn find_signal(&self, label: &str) -> Option<usize> {
        let want = label.trim();
        self.signals
            .iter()
            .position(|s| s.label.trim().eq_ignore_ascii_case(want))
    }

    pub fn sampling_rate(&self, index: usize) -> Option<f64> {
        self.signals
            .get(index)
            .map(|s| s.sampling_rate(self.header.record_duration))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(label: &str, pmin: f64, pmax: f64, dmin: i32, dmax: i32, spr: usize) -> SignalSpec {
        SignalSpec {
            label: label.into(),
            transducer: "AgAgCl electrode".into(),
            physical_dimension: "uV".into(),
            physical_min: pmin,
            physical_max: pmax,
            digital_min: dmin,
            digital_max: dmax,
            prefiltering: "HP:0.1Hz".into(),
            samples_per_record: spr,
        }
    }

    fn info() -> RecordingInfo {
        RecordingInfo {
            patient_id: "X X X X".into(),
            recording_id: "Startdate X X X X".into(),
            start: NaiveDate::from_ymd_opt(2003, 4, 5)
                .unwrap()
                .and_hms_opt(22, 15, 0)
                .unwrap(),
            record_duration: 1.0,
        }
    }

    fn twelve_signal_file() -> Vec<u8> {
        let specs: Vec<_> = (0..12)
            .map(|i| spec(&format!("S{i}"), -100.0, 100.0, -2048, 2047, 4))
            .collect();
        let data = vec![vec![0.0; 8]; 12];
        write_edf(&info(), &specs, &data).unwrap()
    }

    fn patch(bytes: &mut [u8], offset: usize, width: usize, value: &str) {
        let field = format!("{value:<width$}");
        bytes[offset..offset + width].copy_from_slice(field.as_bytes());
    }

    #[test]
    fn twelve_signals_need_3328_header_bytes() {
        let bytes = twelve_signal_file();
        assert_eq!(&bytes[184..192], b"3328    ");
        let (h, specs) = parse_header(&bytes).unwrap();
        assert_eq!(h.header_bytes, 3328);
        assert_eq!(h.num_signals, 12);
        assert_eq!(specs.len(), 12);
        assert_eq!(specs[11].label, "S11");
    }

    #[test]
    fn header_size_mismatch_rejected() {
        let mut bytes = twelve_signal_file();
        patch(&mut bytes, 184, 8, "3000");
        match parse_header(&bytes) {
            Err(EdfError::HeaderSizeMismatch {
                declared, expected, ..
            }) => {
                assert_eq!(declared, 3000);
                assert_eq!(expected, 3328);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_input_is_truncated() {
        assert!(matches!(
            parse_header(&[b' '; 100]),
            Err(EdfError::Truncated { needed: 256, .. })
        ));
        let bytes = twelve_signal_file();
        assert!(matches!(
            parse_header(&bytes[..1000]),
            Err(EdfError::Truncated { needed: 3328, .. })
        ));
    }

    #[test]
    fn non_numeric_field_reports_offset() {
        let mut bytes = twelve_signal_file();
        patch(&mut bytes, 236, 8, "abc");
        match parse_header(&bytes) {
            Err(EdfError::InvalidField { field, offset, .. }) => {
                assert_eq!(field, "number of records");
                assert_eq!(offset, 236);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_ascii_header_bytes_flagged() {
        let mut bytes = twelve_signal_file();
        bytes[10] = 0xE9;
        let (h, _) = parse_header(&bytes).unwrap();
        assert_eq!(h.non_ascii_fields, vec!["patient id"]);
        assert!(h.patient_id.contains('?'));
    }

    #[test]
    fn unknown_record_count_resolved_from_size() {
        let mut bytes = twelve_signal_file();
        patch(&mut bytes, 236, 8, "-1");
        let (h, _) = parse_header(&bytes).unwrap();
        assert!(h.records_declared_unknown);
        assert_eq!(h.num_records, 2);
    }

    #[test]
    fn endpoint_and_identity_scaling() {
        let s = spec("x", -3.0, 7.0, -100, 100, 1);
        assert_eq!(s.to_physical(-100), -3.0);
        assert_eq!(s.to_physical(100), 7.0);

        let ident = spec("id", -32768.0, 32767.0, -32768, 32767, 5);
        let data = vec![vec![-32768.0, -1.0, 0.0, 12345.0, 32767.0]];
        let bytes = write_edf(&info(), &[ident], &data).unwrap();
        let f = EdfFile::from_bytes(bytes).unwrap();
        assert_eq!(f.read_signal(0).unwrap().trace.samples, data[0]);
    }

    #[test]
    fn out_of_range_digital_values_are_clamped_and_counted() {
        let s = spec("x", 0.0, 10.0, 0, 10, 3);
        let mut bytes = write_edf(&info(), &[s], &[vec![0.0, 5.0, 10.0]]).unwrap();
        let (h, _) = parse_header(&bytes).unwrap();
        let at = h.header_bytes;
        bytes[at..at + 2].copy_from_slice(&(-7i16).to_le_bytes());
        bytes[at + 4..at + 6].copy_from_slice(&400i16.to_le_bytes());
        let read = EdfFile::from_bytes(bytes).unwrap().read_signal(0).unwrap();
        assert_eq!(read.clamped, 2);
        assert_eq!(read.trace.samples, vec![0.0, 5.0, 10.0]);
    }

    #[test]
    fn short_data_section_rejected() {
        let bytes = twelve_signal_file();
        let cut = bytes.len() - 10;
        assert!(matches!(
            EdfFile::from_bytes(bytes[..cut].to_vec()),
            Err(EdfError::Truncated { .. })
        ));
        let (h, specs) = parse_header(&bytes).unwrap();
        assert!(matches!(
            read_signal(&bytes[..cut], &h, &specs, 0),
            Err(EdfError::Truncated { .. })
        ));
    }

    #[test]
    fn signal_index_checked() {
        let f = EdfFile::from_bytes(twelve_signal_file()).unwrap();
        assert!(matches!(
            f.read_signal(12),
            Err(EdfError::SignalIndex { index: 12, .. })
        ));
    }

    #[test]
    fn signals_interleave_per_record() {
        let a = spec("A", -32768.0, 32767.0, -32768, 32767, 2);
        let b = spec("B", -32768.0, 32767.0, -32768, 32767, 3);
        let data = vec![vec![1.0, 2.0, 3.0, 4.0], vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]];
        let bytes = write_edf(&info(), &[a, b], &data).unwrap();
        let payload: Vec<i16> = bytes[768..]
            .chunks_exact(2)
            .map(|p| i16::from_le_bytes([p[0], p[1]]))
            .collect();
        assert_eq!(payload, vec![1, 2, 10, 20, 30, 3, 4, 40, 50, 60]);
        let f = EdfFile::from_bytes(bytes).unwrap();
        assert_eq!(f.find_signal(" b "), Some(1));
        assert_eq!(f.read_signal(1).unwrap().trace.samples, data[1]);
        assert_eq!(f.sampling_rate(1), Some(3.0));
    }

    #[test]
    fn bad_start_date_rejected() {
        let mut bytes = twelve_signal_file();
        patch(&mut bytes, 168, 8, "31.02.03");
        assert!(matches!(
            parse_header(&bytes),
            Err(EdfError::InvalidField {
                field: "start date",
                ..
            })
        ));
    }
}
