//! Run configuration: one TOML table per command. Flags override file
//! values, and every run writes the fully resolved result next to its
//! outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use osa_core::nn::ArchSpec;
use osa_core::pipeline::GroupKind;
use osa_core::synth::SynthSpec;
use osa_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

pub const RESOLVED_CONFIG: &str = "resolved-config.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<EvaluateSection>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).context("serializing resolved config")?;
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// Where the resolved config goes for a file output: `split.json` gets
/// `split.resolved-config.toml` beside it.
pub fn resolved_beside(out: &Path) -> PathBuf {
    out.with_extension(RESOLVED_CONFIG)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub manifest: PathBuf,
    pub seed: u64,
    /// Subjects kept per class by undersampling before the split.
    pub per_class: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            manifest: PathBuf::new(),
            seed: 0,
            per_class: osa_core::training::SPLIT_SUBJECTS_PER_CLASS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub manifest: PathBuf,
    pub group: GroupKind,
    pub seq_seconds: f64,
    /// Sleep-window sidecar; defaults to `sleep_windows.csv` beside the
    /// manifest when that file exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub set: Option<String>,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            manifest: PathBuf::new(),
            group: GroupKind::Ecg,
            seq_seconds: 60.0,
            annotations: None,
            split: None,
            set: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Reference,
    Desk,
}

impl Arch {
    pub fn spec(self) -> ArchSpec {
        match self {
            Arch::Reference => ArchSpec::reference(),
            Arch::Desk => ArchSpec::desk(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub train: PathBuf,
    pub val: PathBuf,
    pub arch: Arch,
    /// Hidden width override for the first dense layer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub dropout_keep: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub train_eval_subset: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            train: PathBuf::new(),
            val: PathBuf::new(),
            arch: Arch::Reference,
            hidden: None,
            learning_rate: t.learning_rate,
            iterations: t.iterations,
            batch_size: t.batch_size,
            dropout_keep: t.dropout_keep,
            seed: t.seed,
            eval_every: t.eval_every,
            train_eval_subset: t.train_eval_subset,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            iterations: self.iterations,
            batch_size: self.batch_size,
            dropout_keep: self.dropout_keep,
            seed: self.seed,
            eval_every: self.eval_every,
            train_eval_subset: self.train_eval_subset,
        }
    }

    pub fn arch_spec(&self) -> ArchSpec {
        let mut spec = self.arch.spec();
        if let Some(h) = self.hidden {
            spec.hidden = h;
        }
        spec.keep_prob = self.dropout_keep;
        spec
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub checkpoint: PathBuf,
    pub tensor: PathBuf,
}
