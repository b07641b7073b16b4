//! Named experiment configurations for the desk-scale cipher task.

use super::config::{Algorithm, ExperimentConfig, ModelSpec, TaskSpec};
use crate::bandit::{BanditConfig, CriticPretrainConfig, PretrainConfig};
use crate::data::CipherSpec;
use crate::error::{Error, Result};
use crate::rater::{Perturbation, RaterConfig};

pub const GRANULARITY_GRID: [u32; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
pub const VARIANCE_GRID: [f64; 6] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0];
pub const SKEW_GRID: [f64; 7] = [0.25, 0.5, 0.67, 1.0, 1.5, 2.0, 4.0];

pub const FULL_PRETRAIN_EPOCHS: usize = 10;
pub const WEAK_PRETRAIN_EPOCHS: usize = 1;

pub const NAMES: [&str; 10] = [
    "table2-desk",
    "table2-desk-weak",
    "supervised-desk",
    "supervised-desk-weak",
    "reinforce-desk-weak",
    "epochs-desk",
    "gran-sweep",
    "var-sweep",
    "skew-sweep",
    "smoke",
];

pub fn desk_task() -> TaskSpec {
    TaskSpec::cipher(&CipherSpec {
        vocab_size: 20,
        min_len: 4,
        max_len: 8,
        pairs: 2000,
        reorder_window: 2,
        seed: 2017,
        fractions: crate::data::DEFAULT_FRACTIONS,
    })
}

/// Fully pretrained, one un-perturbed A2C pass over the bandit split.
///
/// Learning rates and batch sizes are scaled for a 2000-pair corpus: with
/// the large-corpus defaults one pretraining epoch barely moves the model
/// and one bandit pass is only ~8 updates.
pub fn desk_base() -> ExperimentConfig {
    ExperimentConfig {
        experiment_id: "table2-desk".into(),
        preset: "table2-desk".into(),
        task: desk_task(),
        model: ModelSpec {
            embed_dim: 32,
            hidden_dim: 32,
            max_decode_len: 21,
        },
        rater: RaterConfig::expert(),
        pretrain: PretrainConfig {
            epochs: FULL_PRETRAIN_EPOCHS,
            batch_size: 4,
            lr: 2e-2,
            clip_norm: Some(1.0),
            ..PretrainConfig::default()
        },
        critic_pretrain: CriticPretrainConfig {
            epochs: 3,
            batch_size: 16,
            lr: 1e-3,
            clip_norm: None,
        },
        bandit: BanditConfig {
            actor_lr: 3e-3,
            critic_lr: 3e-3,
            batch_size: 4,
            clip_norm: None,
        },
        bandit_epochs: 1,
        algorithm: Algorithm::A2c,
        seeds: vec![1, 2, 3, 4, 5],
        heldout_every_epoch: false,
        output_dir: None,
        cache_dir: None,
    }
}

fn named(mut c: ExperimentConfig, preset: &str, id: String) -> ExperimentConfig {
    c.preset = preset.into();
    c.experiment_id = id;
    c
}

fn weak(mut c: ExperimentConfig) -> ExperimentConfig {
    c.pretrain.epochs = WEAK_PRETRAIN_EPOCHS;
    c
}

/// Reference model the robustness sweeps and the multi-epoch run start from.
pub fn sweep_base() -> ExperimentConfig {
    weak(desk_base())
}

pub fn perturbed(p: Perturbation, tag: &str, preset: &str) -> ExperimentConfig {
    let mut c = named(sweep_base(), preset, format!("{preset}-{tag}"));
    c.rater = RaterConfig::with(p);
    c
}

/// Expands a preset name into one or more configs.
pub fn expand(name: &str) -> Result<Vec<ExperimentConfig>> {
    let one = |c: ExperimentConfig| Ok(vec![named(c, name, name.to_string())]);
    match name {
        "table2-desk" => one(desk_base()),
        "table2-desk-weak" => one(weak(desk_base())),
        "supervised-desk" => one(ExperimentConfig {
            algorithm: Algorithm::Supervised,
            ..desk_base()
        }),
        "supervised-desk-weak" => one(ExperimentConfig {
            algorithm: Algorithm::Supervised,
            ..weak(desk_base())
        }),
        "reinforce-desk-weak" => one(ExperimentConfig {
            algorithm: Algorithm::Reinforce,
            ..weak(desk_base())
        }),
        "epochs-desk" => one(ExperimentConfig {
            bandit_epochs: 5,
            heldout_every_epoch: true,
            ..sweep_base()
        }),
        "gran-sweep" => Ok(GRANULARITY_GRID
            .iter()
            .map(|&g| perturbed(Perturbation::Granular { g }, &format!("g{g}"), name))
            .collect()),
        "var-sweep" => Ok(VARIANCE_GRID
            .iter()
            .map(|&lambda| perturbed(Perturbation::Variance { lambda }, &format!("lambda{lambda}"), name))
            .collect()),
        "skew-sweep" => Ok(SKEW_GRID
            .iter()
            .map(|&rho| perturbed(Perturbation::Skew { rho }, &format!("rho{rho}"), name))
            .collect()),
        "smoke" => {
            let mut c = desk_base();
            c.task = TaskSpec::cipher(&CipherSpec {
                vocab_size: 6,
                min_len: 2,
                max_len: 4,
                pairs: 80,
                reorder_window: 2,
                seed: 1,
                fractions: crate::data::DEFAULT_FRACTIONS,
            });
            c.model = ModelSpec {
                embed_dim: 6,
                hidden_dim: 6,
                max_decode_len: 13,
            };
            c.pretrain.epochs = 2;
            c.critic_pretrain.epochs = 1;
            c.seeds = vec![1, 2];
            one(c)
        }
        _ => Err(Error::Config(format!(
            "unknown preset {name:?}; known presets: {}",
            NAMES.join(", ")
        ))),
    }
}

/// The swept parameter of a perturbed config, if it has exactly one.
pub fn sweep_parameter(c: &ExperimentConfig) -> Option<(&'static str, f64)> {
    match c.rater.perturbations.as_slice() {
        [Perturbation::Granular { g }] => Some(("g", *g as f64)),
        [Perturbation::Variance { lambda }] => Some(("lambda", *lambda)),
        [Perturbation::Skew { rho }] => Some(("rho", *rho)),
        _ => None,
    }
}
