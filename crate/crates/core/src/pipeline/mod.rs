//! Awake trimming, fixed-length segmentation, z-score normalization and
//! assembly of per-group segment tensors.
//!
//! Per subject and per channel the order is: read, trim to the sleep window,
//! normalize over the trimmed trace, cut into non-overlapping windows. The
//! trailing partial window is dropped.

mod container;

pub use container::{decode_tensor, encode_tensor, read_tensor, write_tensor, ContainerError, TENSOR_MAGIC};

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, SeverityLabel, Subject};
use crate::edf::{EdfError, EdfFile, SignalTrace};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("sleep window [{onset}, {offset}) s is outside the {duration} s recording")]
    WindowOutOfRange { onset: f64, offset: f64, duration: f64 },
    #[error("sleep window [{onset}, {offset}) s selects no samples")]
    EmptyWindow { onset: f64, offset: f64 },
    #[error("segment length must be at least one sample")]
    ZeroSegmentLength,
    #[error("segment of {seconds} s at {rate} Hz is not a whole number of samples")]
    FractionalSegment { seconds: f64, rate: f64 },
    #[error("cannot normalize an empty sequence")]
    EmptyInput,
    #[error("group {group} expects {expected} channels, got {actual}")]
    ChannelCount {
        group: GroupKind,
        expected: usize,
        actual: usize,
    },
    #[error("channel {label:?} runs at {rate} Hz but the group runs at {expected} Hz")]
    RateMismatch { label: String, rate: f64, expected: f64 },
    #[error("channel {label:?} has {actual} windows of {len} samples, expected {expected} of {expected_len}")]
    WindowMismatch {
        label: String,
        actual: usize,
        len: usize,
        expected: usize,
        expected_len: usize,
    },
    #[error("channel {0:?} not present in recording")]
    MissingChannel(String),
    #[error("no subjects to process")]
    NoSubjects,
    #[error("no segments produced")]
    NoSegments,
    #[error("unknown channel group {0:?}")]
    UnknownGroup(String),
    #[error("subject {subject_id}: {source}")]
    Subject {
        subject_id: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Edf(#[from] EdfError),
    #[error("annotation file {path}: {source}")]
    Annotations { path: PathBuf, source: csv::Error },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    Ecg,
    Eeg,
    Emg,
    Resp,
}

impl GroupKind {
    pub const ALL: [GroupKind; 4] = [GroupKind::Ecg, GroupKind::Eeg, GroupKind::Emg, GroupKind::Resp];

    /// Recording channels used for this modality.
    pub fn standard_labels(self) -> &'static [&'static str] {
        match self {
            GroupKind::Ecg => &["ECG1", "ECG2"],
            GroupKind::Eeg => &["C3", "C4", "A1", "A2"],
            GroupKind::Emg => &["EMG1", "EMG2", "EMG3"],
            GroupKind::Resp => &["AIRFLOW", "THOR EFFORT", "ABDO EFFORT"],
        }
    }

    pub fn channel_count(self) -> usize {
        self.standard_labels().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupKind::Ecg => "ECG",
            GroupKind::Eeg => "EEG",
            GroupKind::Emg => "EMG",
            GroupKind::Resp => "RESP",
        }
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GroupKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ecg" => Ok(GroupKind::Ecg),
            "eeg" => Ok(GroupKind::Eeg),
            "emg" => Ok(GroupKind::Emg),
            "resp" | "respiratory" => Ok(GroupKind::Resp),
            _ => Err(PipelineError::UnknownGroup(s.to_string())),
        }
    }
}

/// A modality and the ordered EDF labels that feed its tensor channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelGroup {
    kind: GroupKind,
    labels: Vec<String>,
}

impl ChannelGroup {
    pub fn standard(kind: GroupKind) -> Self {
        Self {
            kind,
            labels: kind.standard_labels().iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Group with custom labels; the count must still match the modality.
    pub fn with_labels(kind: GroupKind, labels: Vec<String>) -> Result<Self> {
        if labels.len() != kind.channel_count() {
            return Err(PipelineError::ChannelCount {
                group: kind,
                expected: kind.channel_count(),
                actual: labels.len(),
            });
        }
        Ok(Self { kind, labels })
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Sleep interval in seconds from recording start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleepWindow {
    pub subject_id: String,
    #[serde(rename = "sleep_onset_sec")]
    pub onset: f64,
    #[serde(rename = "sleep_offset_sec")]
    pub offset: f64,
}

pub fn read_sleep_windows(path: impl AsRef<Path>) -> Result<HashMap<String, SleepWindow>> {
    let path = path.as_ref();
    let err = |source| PipelineError::Annotations {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(err)?;
    reader
        .deserialize::<SleepWindow>()
        .map(|w| w.map(|w| (w.subject_id.clone(), w)).map_err(err))
        .collect()
}

pub fn write_sleep_windows(path: impl AsRef<Path>, windows: &[SleepWindow]) -> Result<()> {
    let path = path.as_ref();
    let err = |source| PipelineError::Annotations {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for win in windows {
        w.serialize(win).map_err(err)?;
    }
    w.flush().map_err(|e| err(e.into()))?;
    Ok(())
}

/// Restrict a trace to `[onset, offset)`, with sample bounds
/// `floor(onset * rate)` and `floor(offset * rate)`.
pub fn trim_awake(trace: &SignalTrace, window: &SleepWindow) -> Result<SignalTrace> {
    let duration = trace.duration_secs();
    let (onset, offset) = (window.onset, window.offset);
    if !(onset.is_finite() && offset.is_finite()) || onset < 0.0 || offset > duration || onset > offset {
        return Err(PipelineError::WindowOutOfRange {
            onset,
            offset,
            duration,
        });
    }
    let start = (onset * trace.sampling_rate).floor() as usize;
    let end = ((offset * trace.sampling_rate).floor() as usize).min(trace.samples.len());
    if start >= end {
        return Err(PipelineError::EmptyWindow { onset, offset });
    }
    Ok(SignalTrace {
        label: trace.label.clone(),
        sampling_rate: trace.sampling_rate,
        samples: trace.samples[start..end].to_vec(),
    })
}

/// Consecutive non-overlapping windows and the count of trailing samples
/// that did not fill a window.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmented {
    pub windows: Vec<Vec<f64>>,
    pub dropped: usize,
}

pub fn segment(samples: &[f64], seq_len: usize) -> Result<Segmented> {
    if seq_len == 0 {
        return Err(PipelineError::ZeroSegmentLength);
    }
    let chunks = samples.chunks_exact(seq_len);
    let dropped = chunks.remainder().len();
    Ok(Segmented {
        windows: chunks.map(<[f64]>::to_vec).collect(),
        dropped,
    })
}

/// Z-score with the population standard deviation. Sequences whose standard
/// deviation is below 1e-12 map to zeros.
pub fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

/// Window count for a segment duration at a given rate.
pub fn seq_len_for(rate: f64, seconds: f64) -> Result<usize> {
    let exact = rate * seconds;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-6 {
        return Err(PipelineError::FractionalSegment { seconds, rate });
    }
    if rounded < 1.0 {
        return Err(PipelineError::ZeroSegmentLength);
    }
    Ok(rounded as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWindows {
    pub label: String,
    pub sampling_rate: f64,
    pub windows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectWindows {
    pub subject_id: String,
    pub label: SeverityLabel,
    pub channels: Vec<ChannelWindows>,
}

/// N x Seq_L x C segment tensor, row-major, with per-row label and subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTensor {
    values: Vec<f32>,
    labels: Vec<SeverityLabel>,
    subject_ids: Vec<String>,
    seq_len: usize,
    channels: usize,
}

impl SegmentTensor {
    /// Build from raw parts, checking every dimension.
    pub fn from_parts(
        values: Vec<f32>,
        labels: Vec<SeverityLabel>,
        subject_ids: Vec<String>,
        seq_len: usize,
        channels: usize,
    ) -> Option<Self> {
        let n = labels.len();
        let ok = n >= 1
            && seq_len >= 1
            && channels >= 1
            && subject_ids.len() == n
            && values.len() == n * seq_len * channels;
        ok.then_some(Self {
            values,
            labels,
            subject_ids,
            seq_len,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn row_len(&self) -> usize {
        self.seq_len * self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// One segment as `seq_len x channels`, channel-minor.
    pub fn row(&self, n: usize) -> &[f32] {
        let w = self.row_len();
        &self.values[n * w..(n + 1) * w]
    }

    pub fn labels(&self) -> &[SeverityLabel] {
        &self.labels
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.subject_ids.iter().map(String::as_str).collect()
    }

    /// Rows whose subject is in `ids`, in tensor order.
    pub fn select_subjects(&self, ids: &BTreeSet<&str>) -> Option<Self> {
        let rows: Vec<usize> = (0..self.len())
            .filter(|&n| ids.contains(self.subject_ids[n].as_str()))
            .collect();
        self.select_rows(&rows)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Option<Self> {
        let mut values = Vec::with_capacity(rows.len() * self.row_len());
        for &n in rows {
            values.extend_from_slice(self.row(n));
        }
        Self::from_parts(
            values,
            rows.iter().map(|&n| self.labels[n]).collect(),
            rows.iter().map(|&n| self.subject_ids[n].clone()).collect(),
            self.seq_len,
            self.channels,
        )
    }
}

/// Stack per-channel windows on the last axis and concatenate subjects
/// along N in the given order.
pub fn assemble(group: &ChannelGroup, subjects: &[SubjectWindows]) -> Result<SegmentTensor> {
    if subjects.is_empty() {
        return Err(PipelineError::NoSubjects);
    }
    let c = group.labels.len();
    let mut group_rate: Option<f64> = None;
    let mut seq_len: Option<usize> = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut subject_ids = Vec::new();

    for subject in subjects {
        let wrap = |e: PipelineError| PipelineError::Subject {
            subject_id: subject.subject_id.clone(),
            source: Box::new(e),
        };
        if subject.channels.len() != c {
            return Err(wrap(PipelineError::ChannelCount {
                group: group.kind,
                expected: c,
                actual: subject.channels.len(),
            }));
        }
        let n = subject.channels[0].windows.len();
        for ch in &subject.channels {
            let expected = *group_rate.get_or_insert(ch.sampling_rate);
            if ch.sampling_rate != expected {
                return Err(wrap(PipelineError::RateMismatch {
                    label: ch.label.clone(),
                    rate: ch.sampling_rate,
                    expected,
                }));
            }
            if let Some(first) = ch.windows.first() {
                seq_len.get_or_insert(first.len());
            }
            let expected_len = seq_len.unwrap_or(0);
            let bad_len = ch.windows.iter().any(|w| w.len() != expected_len);
            if ch.windows.len() != n || bad_len {
                return Err(wrap(PipelineError::WindowMismatch {
                    label: ch.label.clone(),
                    actual: ch.windows.len(),
                    len: ch.windows.first().map_or(0, Vec::len),
                    expected: n,
                    expected_len,
                }));
            }
        }
        let l = seq_len.unwrap_or(0);
        for w in 0..n {
            for t in 0..l {
                for ch in &subject.channels {
                    values.push(ch.windows[w][t] as f32);
                }
            }
            labels.push(subject.label);
            subject_ids.push(subject.subject_id.clone());
        }
    }
    let seq_len = seq_len.unwrap_or(0);
    SegmentTensor::from_parts(values, labels, subject_ids, seq_len, c).ok_or(PipelineError::NoSegments)
}

/// Per-subject bookkeeping from preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectReport {
    pub subject_id: String,
    pub windows: usize,
    pub dropped_samples: usize,
    pub clamped_samples: usize,
    pub trimmed: bool,
}

/// Read, trim, normalize and segment one subject's channels for `group`.
pub fn preprocess_subject(
    edf: &EdfFile,
    subject: &Subject,
    group: &ChannelGroup,
    window: Option<&SleepWindow>,
    seq_seconds: f64,
) -> Result<(SubjectWindows, SubjectReport)> {
    let mut channels = Vec::with_capacity(group.labels.len());
    let mut report = SubjectReport {
        subject_id: subject.subject_id.clone(),
        windows: 0,
        dropped_samples: 0,
        clamped_samples: 0,
        trimmed: window.is_some(),
    };
    if window.is_none() {
        log::warn!("subject {}: no sleep window, using the full recording", subject.subject_id);
    }
    for label in &group.labels {
        let idx = edf
            .find_signal(label)
            .ok_or_else(|| PipelineError::MissingChannel(label.clone()))?;
        let read = edf.read_signal(idx)?;
        report.clamped_samples += read.clamped;
        let trace = match window {
            Some(w) => trim_awake(&read.trace, w)?,
            None => read.trace,
        };
        let seq_len = seq_len_for(trace.sampling_rate, seq_seconds)?;
        let normalized = normalize(&trace.samples)?;
        let seg = segment(&normalized, seq_len)?;
        report.windows = seg.windows.len();
        report.dropped_samples += seg.dropped;
        channels.push(ChannelWindows {
            label: label.clone(),
            sampling_rate: trace.sampling_rate,
            windows: seg.windows,
        });
    }
    Ok((
        SubjectWindows {
            subject_id: subject.subject_id.clone(),
            label: subject.label(),
            channels,
        },
        report,
    ))
}

/// Run [`preprocess_subject`] over a cohort in parallel and assemble in
/// cohort order.
pub fn preprocess_cohort(
    cohort: &Cohort,
    group: &ChannelGroup,
    windows: &HashMap<String, SleepWindow>,
    seq_seconds: f64,
) -> Result<(SegmentTensor, Vec<SubjectReport>)> {
    if cohort.is_empty() {
        return Err(PipelineError::NoSubjects);
    }
    let per_subject: Vec<(SubjectWindows, SubjectReport)> = cohort
        .subjects()
        .par_iter()
        .map(|s| {
            let run = || {
                let edf = EdfFile::open(&s.edf_path)?;
                preprocess_subject(&edf, s, group, windows.get(&s.subject_id), seq_seconds)
            };
            run().map_err(|e| PipelineError::Subject {
                subject_id: s.subject_id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let (subjects, reports): (Vec<_>, Vec<_>) = per_subject.into_iter().unzip();
    let tensor = assemble(group, &subjects)?;
    Ok((tensor, reports))
}
