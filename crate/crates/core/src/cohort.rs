//! Severity labeling by oahi3 and class-balanced cohort construction.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("oahi3 must be finite and non-negative, got {0}")]
    InvalidOahi3(f64),
    #[error("unknown severity label {0:?}")]
    UnknownLabel(String),
    #[error("subject {subject_id}: label column says {given} but oahi3 {oahi3} means {derived}")]
    LabelDisagrees {
        subject_id: String,
        given: SeverityLabel,
        derived: SeverityLabel,
        oahi3: f64,
    },
    #[error("duplicate subject id {0:?}")]
    DuplicateSubject(String),
    #[error("class {label} has {available} subjects, {required} required")]
    NotEnoughSubjects {
        label: SeverityLabel,
        available: usize,
        required: usize,
    },
    #[error("manifest {path}: {source}")]
    Manifest { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CohortError>;

pub const NUM_CLASSES: usize = 4;

/// OSA severity class, indexed 0..4 in increasing severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SeverityLabel {
    #[serde(rename = "NL")]
    Normal = 0,
    #[serde(rename = "MIN")]
    Minor = 1,
    #[serde(rename = "MOD")]
    Moderate = 2,
    #[serde(rename = "SV")]
    Severe = 3,
}

impl SeverityLabel {
    pub const ALL: [SeverityLabel; NUM_CLASSES] = [
        SeverityLabel::Normal,
        SeverityLabel::Minor,
        SeverityLabel::Moderate,
        SeverityLabel::Severe,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            SeverityLabel::Normal => "NL",
            SeverityLabel::Minor => "MIN",
            SeverityLabel::Moderate => "MOD",
            SeverityLabel::Severe => "SV",
        }
    }
}

impl fmt::Display for SeverityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for SeverityLabel {
    type Err = CohortError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CohortError::UnknownLabel(s.to_string()))
    }
}

/// Severity band for an obstructive apnea-hypopnea index (events/hour).
///
/// Bands are closed on the upper end: (0,1] NL, (1,5] MIN, (5,10] MOD,
/// (10,inf) SV. An index of exactly 0 is treated as NL.
pub fn label_from_oahi3(oahi3: f64) -> Result<SeverityLabel> {
    if !oahi3.is_finite() || oahi3 < 0.0 {
        return Err(CohortError::InvalidOahi3(oahi3));
    }
    Ok(if oahi3 <= 1.0 {
        SeverityLabel::Normal
    } else if oahi3 <= 5.0 {
        SeverityLabel::Minor
    } else if oahi3 <= 10.0 {
        SeverityLabel::Moderate
    } else {
        SeverityLabel::Severe
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub subject_id: String,
    pub edf_path: PathBuf,
    pub oahi3: f64,
    label: SeverityLabel,
}

impl Subject {
    pub fn new(subject_id: impl Into<String>, edf_path: impl Into<PathBuf>, oahi3: f64) -> Result<Self> {
        Ok(Self {
            subject_id: subject_id.into(),
            edf_path: edf_path.into(),
            oahi3,
            label: label_from_oahi3(oahi3)?,
        })
    }

    pub fn label(&self) -> SeverityLabel {
        self.label
    }
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    subject_id: String,
    edf_path: String,
    oahi3: f64,
    #[serde(default)]
    label: Option<String>,
}

/// A list of subjects with cached per-class counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    subjects: Vec<Subject>,
    per_class: [usize; NUM_CLASSES],
}

impl Cohort {
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut per_class = [0; NUM_CLASSES];
        for s in &subjects {
            if !seen.insert(s.subject_id.as_str()) {
                return Err(CohortError::DuplicateSubject(s.subject_id.clone()));
            }
            per_class[s.label.index()] += 1;
        }
        Ok(Self { subjects, per_class })
    }

    /// Read a `subject_id,edf_path,oahi3[,label]` manifest. Relative EDF
    /// paths are resolved against the manifest's directory.
    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let manifest_err = |source| CohortError::Manifest {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(manifest_err)?;
        let mut subjects = Vec::new();
        for row in reader.deserialize::<ManifestRow>() {
            let row = row.map_err(manifest_err)?;
            let edf_path = base.join(&row.edf_path);
            let subject = Subject::new(row.subject_id, edf_path, row.oahi3)?;
            if let Some(given) = row.label.as_deref().filter(|l| !l.is_empty()) {
                let given: SeverityLabel = given.parse()?;
                if given != subject.label {
                    return Err(CohortError::LabelDisagrees {
                        subject_id: subject.subject_id,
                        given,
                        derived: subject.label,
                        oahi3: subject.oahi3,
                    });
                }
            }
            subjects.push(subject);
        }
        Self::new(subjects)
    }

    /// Write a manifest with a `label` column. Paths under `base` are written
    /// relative to it.
    pub fn write_manifest(&self, path: impl AsRef<Path>, base: &Path) -> Result<()> {
        let mut out = File::create(path)?;
        writeln!(out, "subject_id,edf_path,oahi3,label")?;
        for s in &self.subjects {
            let rel = s.edf_path.strip_prefix(base).unwrap_or(&s.edf_path);
            writeln!(out, "{},{},{},{}", s.subject_id, rel.display(), s.oahi3, s.label)?;
        }
        Ok(())
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn per_class_counts(&self) -> [usize; NUM_CLASSES] {
        self.per_class
    }

    pub fn count(&self, label: SeverityLabel) -> usize {
        self.per_class[label.index()]
    }

    pub fn of_class(&self, label: SeverityLabel) -> impl Iterator<Item = &Subject> {
        self.subjects.iter().filter(move |s| s.label == label)
    }

    pub fn get(&self, subject_id: &str) -> Option<&Subject> {
        self.subjects.iter().find(|s| s.subject_id == subject_id)
    }

    /// Sub-cohort containing only the listed subject IDs, in cohort order.
    pub fn restrict<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let keep: HashSet<&str> = ids.into_iter().collect();
        Self::new(
            self.subjects
                .iter()
                .filter(|s| keep.contains(s.subject_id.as_str()))
                .cloned()
                .collect(),
        )
    }
}

/// Keep exactly `per_class` subjects of every class, chosen uniformly
/// without replacement. Classes are visited in index order from one seeded
/// stream; the result preserves the input order.
pub fn undersample(cohort: &Cohort, per_class: usize, seed: u64) -> Result<Cohort> {
    for label in SeverityLabel::ALL {
        let available = cohort.count(label);
        if available < per_class {
            return Err(CohortError::NotEnoughSubjects {
                label,
                available,
                required: per_class,
            });
        }
    }
    let mut rng = SplitMix64::new(seed);
    let mut keep = vec![false; cohort.len()];
    for label in SeverityLabel::ALL {
        let mut members: Vec<usize> = cohort
            .subjects
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect();
        if members.len() > per_class {
            // Partial Fisher-Yates: the first `per_class` slots are a uniform draw.
            for i in 0..per_class {
                let j = i + rng.index(members.len() - i);
                members.swap(i, j);
            }
            members.truncate(per_class);
        }
        for i in members {
            keep[i] = true;
        }
    }
    Cohort::new(
        cohort
            .subjects
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(s, _)| s.clone())
            .collect(),
    )
}
