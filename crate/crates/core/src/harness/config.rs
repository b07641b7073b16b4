use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandit::{BanditConfig, CriticPretrainConfig, PretrainConfig};
use crate::data::{CipherSpec, DEFAULT_FRACTIONS};
use crate::error::{Error, Result};
use crate::rater::RaterConfig;
use crate::seq2seq::Seq2SeqConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Cipher {
        vocab_size: usize,
        min_len: usize,
        max_len: usize,
        pairs: usize,
        reorder_window: usize,
        seed: u64,
        #[serde(default = "default_fractions")]
        fractions: [f64; 4],
    },
    Text {
        src: PathBuf,
        tgt: PathBuf,
        vocab_cap: usize,
        #[serde(default = "default_fractions")]
        fractions: [f64; 4],
        #[serde(default)]
        split_seed: u64,
    },
}

fn default_fractions() -> [f64; 4] {
    DEFAULT_FRACTIONS
}

impl TaskSpec {
    pub fn cipher(spec: &CipherSpec) -> Self {
        TaskSpec::Cipher {
            vocab_size: spec.vocab_size,
            min_len: spec.min_len,
            max_len: spec.max_len,
            pairs: spec.pairs,
            reorder_window: spec.reorder_window,
            seed: spec.seed,
            fractions: spec.fractions,
        }
    }

    pub fn cipher_spec(&self) -> Option<CipherSpec> {
        match *self {
            TaskSpec::Cipher {
                vocab_size,
                min_len,
                max_len,
                pairs,
                reorder_window,
                seed,
                fractions,
            } => Some(CipherSpec {
                vocab_size,
                min_len,
                max_len,
                pairs,
                reorder_window,
                seed,
                fractions,
            }),
            TaskSpec::Text { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    #[serde(default = "default_decode_len")]
    pub max_decode_len: usize,
}

fn default_decode_len() -> usize {
    Seq2SeqConfig::DEFAULT_MAX_DECODE_LEN
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Advantage actor-critic with a learned value baseline.
    A2c,
    /// Policy gradient without a baseline.
    Reinforce,
    /// Maximum-likelihood fine-tuning on bandit-split references.
    Supervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    #[serde(default)]
    pub preset: String,
    pub task: TaskSpec,
    pub model: ModelSpec,
    #[serde(default = "RaterConfig::expert")]
    pub rater: RaterConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub critic_pretrain: CriticPretrainConfig,
    #[serde(default)]
    pub bandit: BanditConfig,
    #[serde(default = "default_bandit_epochs")]
    pub bandit_epochs: usize,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Evaluate heldout BLEU after every bandit epoch instead of only at the end.
    #[serde(default)]
    pub heldout_every_epoch: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Directory for content-addressed pretraining checkpoints.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_bandit_epochs() -> usize {
    1
}

fn default_algorithm() -> Algorithm {
    Algorithm::A2c
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        if self.experiment_id.trim().is_empty() {
            return Err(Error::Config("experiment_id must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        match &self.task {
            TaskSpec::Cipher { .. } => self.task.cipher_spec().unwrap().validate().map_err(cfg)?,
            TaskSpec::Text { vocab_cap, fractions, .. } => {
                if *vocab_cap == 0 {
                    return Err(Error::Config("vocab_cap must be >= 1".into()));
                }
                let total: f64 = fractions.iter().sum();
                if fractions.iter().any(|&f| f < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("split fractions must sum to 1, got {fractions:?}")));
                }
            }
        }
        if self.model.embed_dim == 0 || self.model.hidden_dim == 0 || self.model.max_decode_len == 0 {
            return Err(Error::Config("model dimensions and max_decode_len must be >= 1".into()));
        }
        self.rater.validate().map_err(cfg)?;
        self.pretrain.validate().map_err(cfg)?;
        self.critic_pretrain.validate().map_err(cfg)?;
        self.bandit.validate().map_err(cfg)?;
        Ok(())
    }

    /// Parses and validates; any failure is a [`Error::Config`].
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn seq2seq_config(&self, src_vocab: usize, tgt_vocab: usize) -> Seq2SeqConfig {
        let mut c = Seq2SeqConfig::new(src_vocab, tgt_vocab, self.model.embed_dim, self.model.hidden_dim);
        c.max_decode_len = self.model.max_decode_len;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::presets;

    #[test]
    fn presets_round_trip_and_validate() {
        for name in presets::NAMES {
            for cfg in presets::expand(name).unwrap() {
                cfg.validate().unwrap();
                let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
                assert_eq!(back, cfg);
            }
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let text = r#"{
            "experiment_id": "x",
            "task": {"kind": "cipher", "vocab_size": 8, "min_len": 2, "max_len": 4,
                     "pairs": 40, "reorder_window": 2, "seed": 3},
            "model": {"embed_dim": 4, "hidden_dim": 4}
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(cfg.bandit_epochs, 1);
        assert_eq!(cfg.algorithm, Algorithm::A2c);
        assert_eq!(cfg.pretrain.batch_size, 64);
        assert!(cfg.rater.perturbations.is_empty());
    }

    #[test]
    fn bad_configs_are_config_errors() {
        let base = presets::expand("table2-desk").unwrap().remove(0);
        let mut bad = base.clone();
        bad.seeds.clear();
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut bad = base.clone();
        bad.seeds = vec![1, 1];
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut bad = base.clone();
        bad.bandit.actor_lr = -1.0;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_json("{"), Err(Error::Config(_))));
        let unknown = base.to_json().replacen('{', "{\"bogus\": 1,", 1);
        assert!(matches!(ExperimentConfig::from_json(&unknown), Err(Error::Config(_))));
    }
}
