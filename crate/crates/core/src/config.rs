//! Experiment configuration. One JSON file mirrors [`RunConfig`]; every field has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::AlignTrainConfig;
use crate::captions::EvalMode;
use crate::corpus::CorpusConfig;
use crate::prior::{PriorTrainConfig, SdeConfig};
use crate::seed;
use crate::synth::DecoderTrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub align: AlignTrainConfig,
    pub decoder: DecoderTrainConfig,
    pub prior: PriorTrainConfig,
    pub sde: SdeConfig,
    /// Random partial captions paired with each recording in Stage II, on top of one
    /// single-attribute caption per attribute.
    pub extra_captions_per_record: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            align: AlignTrainConfig::default(),
            decoder: DecoderTrainConfig::default(),
            prior: PriorTrainConfig::default(),
            sde: SdeConfig::default(),
            extra_captions_per_record: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub n_per_caption: usize,
    pub n_steps: usize,
    pub fail_fast: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { mode: EvalMode::Paper44, n_per_caption: 20, n_steps: 100, fail_fast: false, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut config = RunConfig {
            corpus_dir: "run/corpus".into(),
            checkpoint_dir: "run/checkpoints".into(),
            report_dir: "run/reports".into(),
            seed: 0,
            corpus: CorpusConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        };
        config.apply_seed(0);
        config
    }
}

impl RunConfig {
    /// Sets the master seed and derives every stage seed from it.
    pub fn apply_seed(&mut self, master: u64) {
        self.seed = master;
        self.corpus.seed = seed::derive(master, &[1]);
        self.train.align.seed = seed::derive(master, &[2]);
        self.train.decoder.seed = seed::derive(master, &[3]);
        self.train.prior.seed = seed::derive(master, &[4]);
        self.eval.seed = seed::derive(master, &[5]);
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
