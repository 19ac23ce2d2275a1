//! Run configuration: one JSON file plus command-line overrides; flags win.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use betarate::corpus::FilterPolicy;
use betarate::metrics::AlphaLevel;
use betarate::model::{EncoderConfig, DEFAULT_HIDDEN_DIM};
use betarate::splits::{Partition, Scenario};
use betarate::synth::SynthConfig;

use crate::errors::{missing, CliError};

/// Input and output locations; each can also come from a subcommand flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub instances: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub clamp: Option<PathBuf>,
    pub fusion: Option<PathBuf>,
    pub judges: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub hidden_dim: usize,
    /// With `false`, training ignores the dev partition and keeps the
    /// last-epoch parameters instead of the best dev-NLL snapshot.
    pub dev_snapshot: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            patience: 5,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            dev_snapshot: true,
        }
    }
}

/// Synthetic-corpus knobs; unset fields keep the library defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub questions: Option<usize>,
    pub candidates_per_question: Option<usize>,
    pub lalms: Option<usize>,
    pub min_raters: Option<usize>,
    pub max_raters: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub flag_fraction: Option<f64>,
    pub content_vocab_size: Option<usize>,
    pub distractor_vocab_size: Option<usize>,
    pub overlap_choices: Option<Vec<usize>>,
}

impl SynthSection {
    pub fn to_config(&self, seed: u64) -> SynthConfig {
        let mut cfg = SynthConfig { seed, ..SynthConfig::default() };
        if let Some(v) = self.questions {
            cfg.n_questions = v;
        }
        if let Some(v) = self.candidates_per_question {
            cfg.candidates_per_question = v;
        }
        if let Some(v) = self.lalms {
            cfg.n_lalms = v;
        }
        if let Some(v) = self.min_raters {
            cfg.min_raters = v;
        }
        if let Some(v) = self.max_raters {
            cfg.max_raters = v;
        }
        if let Some(v) = self.noise_sigma {
            cfg.noise_sigma = v;
        }
        if let Some(v) = self.flag_fraction {
            cfg.flag_fraction = v;
        }
        if let Some(v) = self.content_vocab_size {
            cfg.content_vocab_size = v;
        }
        if let Some(v) = self.distractor_vocab_size {
            cfg.distractor_vocab_size = v;
        }
        if self.overlap_choices.is_some() {
            cfg.overlap_choices = self.overlap_choices.clone();
        }
        cfg
    }
}

/// A manifest partition, or every instance in the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PartitionChoice {
    Train,
    Dev,
    Test,
    All,
}

impl PartitionChoice {
    pub fn partition(self) -> Option<Partition> {
        match self {
            PartitionChoice::Train => Some(Partition::Train),
            PartitionChoice::Dev => Some(Partition::Dev),
            PartitionChoice::Test => Some(Partition::Test),
            PartitionChoice::All => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub include_question: bool,
    pub include_rationale: bool,
    pub include_transcript: bool,
    /// Separator between assembled input slots.
    pub separator: String,
    pub seed: u64,
    pub scenario: Scenario,
    /// Held-out system ids for the unseen-lalm scenario.
    pub holdout: Vec<String>,
    /// Partition targeted by predict and evaluate.
    pub partition: PartitionChoice,
    pub alpha_level: AlphaLevel,
    pub train: TrainSection,
    pub encoder: EncoderConfig,
    pub filter: FilterPolicy,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            include_question: true,
            include_rationale: true,
            include_transcript: false,
            separator: "\n###\n".into(),
            seed: 0,
            scenario: Scenario::UnseenQuestion,
            holdout: Vec::new(),
            partition: PartitionChoice::All,
            alpha_level: AlphaLevel::Interval,
            train: TrainSection::default(),
            encoder: EncoderConfig::default(),
            filter: FilterPolicy::default(),
            synth: SynthSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| missing(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config `{}`: {e}", path.display())))
    }

    /// SHA-256 hex digest of the effective configuration, with `paths`
    /// cleared before hashing.
    pub fn config_hash(&self) -> String {
        let mut stripped = self.clone();
        stripped.paths = Paths::default();
        let bytes = serde_json::to_vec(&stripped).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The configured path for `name`, or a config error saying how to set it.
pub fn require<'a>(opt: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
    opt.as_deref().ok_or_else(|| {
        CliError::Config(format!("no `{name}` path given (flag --{name} or config paths.{name})"))
    })
}
