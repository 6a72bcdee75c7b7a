//! Synthetic EDF cohorts with class-dependent structure.
//!
//! Every channel carries a base sinusoid whose frequency depends on the
//! severity class and modality. Hann-windowed bursts raise its amplitude;
//! their count scales with the subject's oahi3 and their height depends on
//! the class. White noise is added on top. The first and last few minutes of each
//! recording are marked awake and carry extra noise.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, CohortError, SeverityLabel, Subject, NUM_CLASSES};
use crate::edf::{write_edf, EdfError, RecordingInfo, SignalSpec};
use crate::pipeline::{write_sleep_windows, GroupKind, PipelineError, SleepWindow};
use crate::rng::SplitMix64;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SLEEP_WINDOWS_FILE: &str = "sleep_windows.csv";

/// Physical range written to every channel; the full 16-bit digital range
/// maps onto it.
pub const PHYSICAL_LIMIT: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error("writing {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Edf(#[from] EdfError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// One value per modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerGroup<T> {
    pub ecg: T,
    pub eeg: T,
    pub emg: T,
    pub resp: T,
}

impl<T: Copy> PerGroup<T> {
    pub fn get(&self, kind: GroupKind) -> T {
        match kind {
            GroupKind::Ecg => self.ecg,
            GroupKind::Eeg => self.eeg,
            GroupKind::Emg => self.emg,
            GroupKind::Resp => self.resp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub subjects_per_class: usize,
    pub channels_per_group: PerGroup<usize>,
    pub sampling_rate_hz: PerGroup<f64>,
    pub duration_secs: f64,
    pub record_duration_secs: f64,
    /// Base oscillation per class (NL, MIN, MOD, SV) before the group scale.
    pub class_frequency_hz: [f64; NUM_CLASSES],
    pub group_frequency_scale: PerGroup<f64>,
    /// Relative per-subject frequency jitter, drawn uniformly in +/- this.
    pub frequency_jitter: f64,
    /// Bursts per hour of sleep per unit of oahi3.
    pub burst_rate_per_oahi3: f64,
    pub burst_amplitude: [f64; NUM_CLASSES],
    pub burst_secs: f64,
    pub noise: f64,
    pub awake_noise: f64,
    /// Awake time at each end of the recording, whole seconds drawn
    /// uniformly from this inclusive range.
    pub awake_secs: (u32, u32),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            subjects_per_class: 8,
            channels_per_group: PerGroup {
                ecg: 2,
                eeg: 4,
                emg: 3,
                resp: 3,
            },
            sampling_rate_hz: PerGroup {
                ecg: 64.0,
                eeg: 64.0,
                emg: 64.0,
                resp: 64.0,
            },
            duration_secs: 1200.0,
            record_duration_secs: 1.0,
            class_frequency_hz: [1.0, 2.0, 3.0, 4.0],
            group_frequency_scale: PerGroup {
                ecg: 1.0,
                eeg: 1.5,
                emg: 2.0,
                resp: 0.3,
            },
            frequency_jitter: 0.05,
            burst_rate_per_oahi3: 6.0,
            burst_amplitude: [0.5, 1.0, 1.5, 2.0],
            burst_secs: 4.0,
            noise: 0.3,
            awake_noise: 1.0,
            awake_secs: (60, 180),
            seed: 0,
        }
    }
}

/// oahi3 is drawn uniformly from these intervals, which sit strictly inside
/// the severity bands.
const OAHI3_DRAW: [(f64, f64); NUM_CLASSES] = [(0.2, 0.9), (1.5, 4.5), (5.5, 9.5), (11.0, 30.0)];

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.subjects_per_class == 0 {
            return bad("subjects_per_class must be positive".into());
        }
        if !(self.duration_secs > 0.0 && self.record_duration_secs > 0.0) {
            return bad("durations must be positive".into());
        }
        let records = self.duration_secs / self.record_duration_secs;
        if records.fract() != 0.0 {
            return bad(format!(
                "duration {} s is not a whole number of {} s records",
                self.duration_secs, self.record_duration_secs
            ));
        }
        for kind in GroupKind::ALL {
            let rate = self.sampling_rate_hz.get(kind);
            let per_record = rate * self.record_duration_secs;
            if !(rate > 0.0) || per_record.fract() != 0.0 {
                return bad(format!(
                    "{kind} sampling rate {rate} Hz gives a fractional sample count per record"
                ));
            }
            let top = self.class_frequency_hz.iter().cloned().fold(0.0, f64::max)
                * self.group_frequency_scale.get(kind)
                * (1.0 + self.frequency_jitter);
            if top >= rate / 2.0 {
                return bad(format!("{kind} frequency {top} Hz exceeds Nyquist at {rate} Hz"));
            }
        }
        if self.channels().is_empty() {
            return bad("no channels".into());
        }
        let (lo, hi) = self.awake_secs;
        if lo > hi || 2.0 * hi as f64 >= self.duration_secs {
            return bad(format!("awake range {lo}..={hi} s leaves no sleep"));
        }
        if !(0.0..1.0).contains(&self.frequency_jitter) {
            return bad("frequency_jitter must lie in [0, 1)".into());
        }
        let non_negative = [self.noise, self.awake_noise, self.burst_rate_per_oahi3, self.burst_secs];
        if non_negative.iter().chain(&self.burst_amplitude).any(|v| !(*v >= 0.0)) {
            return bad("noise, burst rate, amplitude and length must be non-negative".into());
        }
        Ok(())
    }

    /// `(group, label)` for every channel in file order. Groups beyond their
    /// standard channel count get numbered labels.
    pub fn channels(&self) -> Vec<(GroupKind, String)> {
        let mut out = Vec::new();
        for kind in GroupKind::ALL {
            let standard = kind.standard_labels();
            for i in 0..self.channels_per_group.get(kind) {
                let label = standard
                    .get(i)
                    .map_or_else(|| format!("{}{}", kind.name(), i + 1), |s| s.to_string());
                out.push((kind, label));
            }
        }
        out
    }
}

/// Analytic parameters of one generated channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelSignature {
    pub label: String,
    pub group: GroupKind,
    pub sampling_rate: f64,
    pub frequency_hz: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectSignature {
    pub subject_id: String,
    pub label: SeverityLabel,
    pub oahi3: f64,
    pub bursts: usize,
    pub sleep: (f64, f64),
    pub channels: Vec<ChannelSignature>,
}

#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub cohort: Cohort,
    pub manifest: PathBuf,
    pub sleep_windows: PathBuf,
    pub subjects: Vec<SubjectSignature>,
}

fn hann(u: f64) -> f64 {
    if (0.0..=1.0).contains(&u) {
        0.5 - 0.5 * (TAU * u).cos()
    } else {
        0.0
    }
}

struct Generated {
    signature: SubjectSignature,
    bytes: Vec<u8>,
}

fn generate_subject(spec: &SynthSpec, class: SeverityLabel, subject_id: String, rng: &mut SplitMix64) -> Result<Generated> {
    let c = class.index();
    let (lo, hi) = OAHI3_DRAW[c];
    let oahi3 = rng.uniform(lo, hi);
    let (awake_lo, awake_hi) = spec.awake_secs;
    let span = (awake_hi - awake_lo) as usize + 1;
    let onset = (awake_lo as usize + rng.index(span)) as f64;
    let offset = spec.duration_secs - (awake_lo as usize + rng.index(span)) as f64;
    let jitter = 1.0 + spec.frequency_jitter * rng.uniform(-1.0, 1.0);

    let sleep_hours = (offset - onset) / 3600.0;
    let bursts = (oahi3 * spec.burst_rate_per_oahi3 * sleep_hours).round() as usize;
    let latest_start = (offset - onset - spec.burst_secs).max(0.0);
    let burst_starts: Vec<f64> = (0..bursts).map(|_| onset + rng.uniform(0.0, latest_start)).collect();

    let mut signals = Vec::new();
    let mut data = Vec::new();
    let mut channels = Vec::new();
    for (group, label) in spec.channels() {
        let rate = spec.sampling_rate_hz.get(group);
        let frequency = spec.class_frequency_hz[c] * spec.group_frequency_scale.get(group) * jitter;
        let phase = rng.uniform(0.0, TAU);
        let n = (spec.duration_secs * rate).round() as usize;
        let mut x: Vec<f64> = (0..n)
            .map(|i| (TAU * frequency * i as f64 / rate + phase).sin())
            .collect();
        let amplitude = spec.burst_amplitude[c];
        for &start in &burst_starts {
            let first = (start * rate).floor() as usize;
            let last = (((start + spec.burst_secs) * rate).ceil() as usize).min(n);
            for (i, v) in x.iter_mut().enumerate().take(last).skip(first) {
                let t = i as f64 / rate;
                *v += amplitude * hann((t - start) / spec.burst_secs) * (TAU * frequency * t + phase).sin();
            }
        }
        if spec.noise > 0.0 || spec.awake_noise > 0.0 {
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / rate;
                let sigma = if t < onset || t >= offset {
                    spec.noise + spec.awake_noise
                } else {
                    spec.noise
                };
                *v += sigma * rng.normal();
            }
        }
        signals.push(SignalSpec {
            label: label.clone(),
            transducer: "synthetic".into(),
            physical_dimension: "uV".into(),
            physical_min: -PHYSICAL_LIMIT,
            physical_max: PHYSICAL_LIMIT,
            digital_min: i16::MIN as i32,
            digital_max: i16::MAX as i32,
            prefiltering: String::new(),
            samples_per_record: (rate * spec.record_duration_secs).round() as usize,
        });
        data.push(x);
        channels.push(ChannelSignature {
            label,
            group,
            sampling_rate: rate,
            frequency_hz: frequency,
            phase,
        });
    }
    let info = RecordingInfo {
        patient_id: subject_id.clone(),
        recording_id: format!("synthetic cohort seed {}", spec.seed),
        start: NaiveDate::from_ymd_opt(2000, 1, 1)
            .and_then(|d| d.and_hms_opt(22, 0, 0))
            .expect("valid date"),
        record_duration: spec.record_duration_secs,
    };
    let bytes = write_edf(&info, &signals, &data)?;
    Ok(Generated {
        signature: SubjectSignature {
            subject_id,
            label: class,
            oahi3,
            bursts,
            sleep: (onset, offset),
            channels,
        },
        bytes,
    })
}

/// Write one EDF per subject plus `manifest.csv` and `sleep_windows.csv`
/// into `dir`. Subject `i` (class-major order) draws from stream `i` of
/// the spec seed, so output does not depend on thread scheduling.
pub fn generate_cohort(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<SynthCohort> {
    spec.validate()?;
    let dir = dir.as_ref();
    let write_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Write { path, source }
    };
    fs::create_dir_all(dir).map_err(write_err(dir))?;

    let jobs: Vec<(SeverityLabel, String)> = SeverityLabel::ALL
        .iter()
        .flat_map(|&label| (0..spec.subjects_per_class).map(move |i| (label, format!("syn-{}-{i:02}", label.code()))))
        .collect();
    let generated: Vec<SubjectSignature> = jobs
        .into_par_iter()
        .enumerate()
        .map(|(i, (label, id))| {
            let mut rng = SplitMix64::stream(spec.seed, i as u64);
            let g = generate_subject(spec, label, id, &mut rng)?;
            let path = dir.join(format!("{}.edf", g.signature.subject_id));
            fs::write(&path, &g.bytes).map_err(write_err(&path))?;
            Ok(g.signature)
        })
        .collect::<Result<_>>()?;

    let subjects = generated
        .iter()
        .map(|g| Subject::new(g.subject_id.clone(), dir.join(format!("{}.edf", g.subject_id)), g.oahi3))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let cohort = Cohort::new(subjects)?;
    let manifest = dir.join(MANIFEST_FILE);
    cohort.write_manifest(&manifest, dir)?;

    let windows: Vec<SleepWindow> = generated
        .iter()
        .map(|g| SleepWindow {
            subject_id: g.subject_id.clone(),
            onset: g.sleep.0,
            offset: g.sleep.1,
        })
        .collect();
    let sleep_windows = dir.join(SLEEP_WINDOWS_FILE);
    write_sleep_windows(&sleep_windows, &windows)?;

    Ok(SynthCohort {
        cohort,
        manifest,
        sleep_windows,
        subjects: generated,
    })
}
