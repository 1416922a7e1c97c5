//! Pipeline configuration, read from TOML.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{ClassifierShape, Selection, TrainSchedule};
use crate::data::SyntheticConfig;
use crate::energy::DetectorConfig;
use crate::error::{Error, Result};
use crate::influence::LissaConfig;
use crate::lm::LmTrainConfig;

/// Environment variable that overrides `backend.url`.
pub const LM_URL_ENV: &str = "GOT_LM_URL";

/// The literal `"auto"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

/// A setting whose default depends on the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrAuto<T> {
    Value(T),
    Auto(AutoKeyword),
}

impl<T> Default for OrAuto<T> {
    fn default() -> Self {
        OrAuto::Auto(AutoKeyword::Auto)
    }
}

impl<T: Copy> OrAuto<T> {
    pub fn resolve(&self, auto: T) -> T {
        match self {
            OrAuto::Value(v) => *v,
            OrAuto::Auto(_) => auto,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Seeded templated corpus; needs no files.
    #[default]
    Synthetic,
    /// CLINC150 single JSON file.
    Clinc,
    /// SNIPS TSV file or directory; `holdout` intents become unknown.
    Snips,
    /// A directory previously written by the ingest stage.
    Splits,
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DataSource::Synthetic => "synthetic",
            DataSource::Clinc => "clinc",
            DataSource::Snips => "snips",
            DataSource::Splits => "splits",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Dataset file or directory; unused for `synthetic`.
    pub path: PathBuf,
    /// SNIPS intents treated as unknown.
    pub holdout: Vec<String>,
    /// Words seen fewer times than this in training map to `<unk>`.
    pub min_count: usize,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            path: PathBuf::new(),
            holdout: crate::data::SNIPS_DEFAULT_HOLDOUT.iter().map(|s| s.to_string()).collect(),
            min_count: 1,
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Recurrent LMs trained on the training split.
    #[default]
    Builtin,
    /// Background and masked LMs served over HTTP; the class-conditional LM
    /// is still trained locally unless `remote_class_conditional` is set.
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub url: String,
    pub timeout_secs: u64,
    pub remote_class_conditional: bool,
    /// Extra unlabeled corpus (JSON lines with a `text` field) for the
    /// built-in background and masked LMs; empty for none. The synthetic
    /// source always adds its own general-domain corpus.
    pub corpus: PathBuf,
    /// Class-conditional and background LMs.
    pub causal: LmTrainConfig,
    pub masked: LmTrainConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Builtin,
            url: "http://127.0.0.1:8080".into(),
            timeout_secs: 30,
            remote_class_conditional: false,
            corpus: PathBuf::new(),
            causal: LmTrainConfig::default(),
            masked: LmTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub shape: ClassifierShape,
    /// Cross-entropy training of the base classifier.
    pub base: TrainSchedule,
    /// Training of the classifier whose influence values weight the pool.
    pub weighting: TrainSchedule,
    /// Final fine-tune on the weighted pool.
    pub finetune: TrainSchedule,
    /// Validation quantile used to pick the threshold δ.
    pub delta_quantile: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let tune = TrainSchedule { epochs: 10, selection: Selection::Last, ..TrainSchedule::default() };
        ClassifierConfig {
            shape: ClassifierShape::default(),
            base: TrainSchedule::default(),
            weighting: tune.clone(),
            finetune: TrainSchedule { epochs: 20, ..tune },
            delta_quantile: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GotConfig {
    /// Locate threshold on `S(w, y)`.
    pub epsilon: OrAuto<f64>,
    /// Candidates per located position.
    pub k: usize,
    /// Generated utterances kept per intent.
    pub per_intent_target: OrAuto<usize>,
    pub gamma: f64,
    pub lissa: LissaConfig,
    /// Start the final fine-tune from the weighting classifier instead of
    /// the base classifier.
    pub reuse_weighting_classifier: bool,
    /// Also fine-tune on the unweighted pool (`α = 1`) and report it.
    pub report_unweighted: bool,
}

impl Default for GotConfig {
    fn default() -> Self {
        GotConfig {
            epsilon: OrAuto::default(),
            k: 2,
            per_intent_target: OrAuto::default(),
            gamma: 20.0,
            lissa: LissaConfig::default(),
            reuse_weighting_classifier: false,
            report_unweighted: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MspConfig {
    /// Weight of the KL-to-uniform term on the weighted pool; `0` skips the
    /// fine-tune.
    pub beta: f64,
}

impl Default for MspConfig {
    fn default() -> Self {
        MspConfig { beta: 1.0 }
    }
}

/// Everything a pipeline run depends on. Stage seeds are derived from
/// `seed`; the `seed` fields of nested sections are mixed in as offsets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub backend: BackendConfig,
    pub detector: DetectorConfig,
    pub classifier: ClassifierConfig,
    pub got: GotConfig,
    pub msp: MspConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// Applies `GOT_LM_URL` if set.
    pub fn with_env(mut self) -> Self {
        if let Ok(url) = std::env::var(LM_URL_ENV) {
            if !url.is_empty() {
                self.backend.url = url;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.got.lissa.validate()?;
        if self.got.k == 0 {
            return Err(Error::Config("got.k must be >= 1".into()));
        }
        if !self.got.gamma.is_finite() || self.got.gamma < 0.0 {
            return Err(Error::Config(format!("got.gamma must be finite and >= 0, got {}", self.got.gamma)));
        }
        if !(0.0..=1.0).contains(&self.classifier.delta_quantile) {
            return Err(Error::Config("classifier.delta_quantile must lie in [0, 1]".into()));
        }
        if self.msp.beta < 0.0 {
            return Err(Error::Config("msp.beta must be >= 0".into()));
        }
        if self.data.source != DataSource::Synthetic && self.data.path.as_os_str().is_empty() {
            return Err(Error::Config(format!("data.path is required for source `{}`", self.data.source)));
        }
        if self.data.min_count == 0 {
            return Err(Error::Config("data.min_count must be >= 1".into()));
        }
        Ok(())
    }

    /// `ε` after resolving `auto` against the dataset.
    pub fn epsilon(&self) -> f64 {
        let auto = match self.data.source {
            DataSource::Synthetic => 8.0,
            DataSource::Snips => 1500.0,
            DataSource::Clinc | DataSource::Splits => 150.0,
        };
        self.got.epsilon.resolve(auto)
    }

    /// Per-intent target after resolving `auto` against the dataset.
    pub fn per_intent_target(&self) -> usize {
        let auto = match self.data.source {
            DataSource::Synthetic => 100,
            DataSource::Snips => 1800,
            DataSource::Clinc | DataSource::Splits => 100,
        };
        self.got.per_intent_target.resolve(auto)
    }

    /// Seed for one stage, derived from the run seed, the stage name and an
    /// offset taken from the stage's own section.
    pub fn stage_seed(&self, stage: &str, offset: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(stage.as_bytes());
        h.update(offset.to_le_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips_and_lists_defaults() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        for key in ["epsilon = \"auto\"", "lambda = 0.1", "m_in = -8.0", "gamma = 20.0", "damping = 0.003", "k = 2"] {
            assert!(text.contains(key), "missing `{key}` in\n{text}");
        }
    }

    #[test]
    fn partial_files_fill_defaults_and_reject_typos() {
        let cfg = PipelineConfig::from_toml("seed = 3\n[got]\nepsilon = 2.5\nper_intent_target = 7\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.epsilon(), 2.5);
        assert_eq!(cfg.per_intent_target(), 7);
        assert_eq!(cfg.detector, DetectorConfig::default());
        assert!(PipelineConfig::from_toml("[got]\nepsilom = 1\n").is_err());
        assert!(PipelineConfig::from_toml("[got]\nepsilon = \"often\"\n").is_err());
    }

    #[test]
    fn dataset_dependent_defaults() {
        let mut cfg = PipelineConfig::default();
        cfg.data.source = DataSource::Clinc;
        assert_eq!((cfg.epsilon(), cfg.per_intent_target()), (150.0, 100));
        cfg.data.source = DataSource::Snips;
        assert_eq!((cfg.epsilon(), cfg.per_intent_target()), (1500.0, 1800));
    }

    #[test]
    fn stage_seeds_differ_by_stage_and_run() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { seed: 1, ..PipelineConfig::default() };
        assert_ne!(a.stage_seed("x", 0), a.stage_seed("y", 0));
        assert_ne!(a.stage_seed("x", 0), a.stage_seed("x", 1));
        assert_ne!(a.stage_seed("x", 0), b.stage_seed("x", 0));
    }
}
