use chrono::{Datelike, NaiveDateTime, Timelike};

use super::{EdfError, Result, SignalSpec, FIXED_HEADER_BYTES, SIGNAL_HEADER_BYTES};

/// Recording-level fields supplied by the caller; everything else in the
/// fixed header is derived from the signals and data.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingInfo {
    pub patient_id: String,
    pub recording_id: String,
    pub start: NaiveDateTime,
    pub record_duration: f64,
}

fn put_text(out: &mut Vec<u8>, field: &'static str, value: &str, width: usize) -> Result<()> {
    if !value.is_ascii() || value.len() > width {
        return Err(EdfError::FieldOverflow {
            field,
            value: value.to_string(),
            width,
        });
    }
    out.extend_from_slice(value.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - value.len()));
    Ok(())
}

/// Shortest decimal text that parses back to exactly `x`.
fn put_number(out: &mut Vec<u8>, field: &'static str, x: f64, width: usize) -> Result<()> {
    put_text(out, field, &format!("{x}"), width)
}

/// Serialize a complete EDF file.
///
/// `data[i]` holds signal `i` in physical units; every signal must cover the
/// same whole number of records. Values are quantized by rounding to the
/// nearest digital level and clamped to the digital range.
pub fn write_edf(info: &RecordingInfo, signals: &[SignalSpec], data: &[Vec<f64>]) -> Result<Vec<u8>> {
    if signals.is_empty() {
        return Err(EdfError::InvalidField {
            field: "number of signals",
            offset: 252,
            value: "0".into(),
        });
    }
    if data.len() != signals.len() {
        return Err(EdfError::SampleCount {
            index: data.len().min(signals.len()),
            expected: signals.len(),
            actual: data.len(),
        });
    }
    if !(info.record_duration.is_finite() && info.record_duration > 0.0) {
        return Err(EdfError::InvalidField {
            field: "record duration",
            offset: 244,
            value: info.record_duration.to_string(),
        });
    }
    for (i, s) in signals.iter().enumerate() {
        s.validate(i)?;
    }
    let num_records = data[0].len() / signals[0].samples_per_record;
    for (i, (s, d)) in signals.iter().zip(data).enumerate() {
        let expected = num_records * s.samples_per_record;
        if d.len() != expected {
            return Err(EdfError::SampleCount {
                index: i,
                expected,
                actual: d.len(),
            });
        }
    }

    let ns = signals.len();
    let header_bytes = FIXED_HEADER_BYTES + SIGNAL_HEADER_BYTES * ns;
    let record_len: usize = signals.iter().map(|s| s.samples_per_record).sum();
    let mut out = Vec::with_capacity(header_bytes + 2 * record_len * num_records);

    let t = info.start;
    put_text(&mut out, "version", "0", 8)?;
    put_text(&mut out, "patient id", &info.patient_id, 80)?;
    put_text(&mut out, "recording id", &info.recording_id, 80)?;
    let date = format!("{:02}.{:02}.{:02}", t.day(), t.month(), t.year().rem_euclid(100));
    put_text(&mut out, "start date", &date, 8)?;
    let time = format!("{:02}.{:02}.{:02}", t.hour(), t.minute(), t.second());
    put_text(&mut out, "start time", &time, 8)?;
    put_text(&mut out, "header bytes", &header_bytes.to_string(), 8)?;
    put_text(&mut out, "reserved", "", 44)?;
    put_text(&mut out, "number of records", &num_records.to_string(), 8)?;
    put_number(&mut out, "record duration", info.record_duration, 8)?;
    put_text(&mut out, "number of signals", &ns.to_string(), 4)?;

    for s in signals {
        put_text(&mut out, "label", &s.label, 16)?;
    }
    for s in signals {
        put_text(&mut out, "transducer", &s.transducer, 80)?;
    }
    for s in signals {
        put_text(&mut out, "physical dimension", &s.physical_dimension, 8)?;
    }
    for s in signals {
        put_number(&mut out, "physical minimum", s.physical_min, 8)?;
    }
    for s in signals {
        put_number(&mut out, "physical maximum", s.physical_max, 8)?;
    }
    for s in signals {
        put_text(&mut out, "digital minimum", &s.digital_min.to_string(), 8)?;
    }
    for s in signals {
        put_text(&mut out, "digital maximum", &s.digital_max.to_string(), 8)?;
    }
    for s in signals {
        put_text(&mut out, "prefiltering", &s.prefiltering, 80)?;
    }
    for s in signals {
        put_text(&mut out, "samples per record", &s.samples_per_record.to_string(), 8)?;
    }
    for _ in signals {
        put_text(&mut out, "reserved", "", 32)?;
    }
    debug_assert_eq!(out.len(), header_bytes);

    let quantizers: Vec<_> = signals
        .iter()
        .map(|s| {
            let gain = (s.digital_max - s.digital_min) as f64 / (s.physical_max - s.physical_min);
            let (lo, hi) = (
                s.digital_min.min(s.digital_max) as f64,
                s.digital_min.max(s.digital_max) as f64,
            );
            move |p: f64| -> i16 {
                let d = s.digital_min as f64 + (p - s.physical_min) * gain;
                d.round().clamp(lo, hi) as i16
            }
        })
        .collect();

    for r in 0..num_records {
        for ((s, d), q) in signals.iter().zip(data).zip(&quantizers) {
            let spr = s.samples_per_record;
            for &p in &d[r * spr..(r + 1) * spr] {
                out.extend_from_slice(&q(p).to_le_bytes());
            }
        }
    }
    Ok(out)
}
