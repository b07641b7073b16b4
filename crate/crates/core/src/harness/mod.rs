//! Experiment orchestration: pretraining, critic pretraining, bandit
//! passes, reference and final metrics, multi-seed aggregation, and CSV /
//! SVG output.

pub mod config;
mod experiment;
pub mod metrics;
pub mod presets;
pub mod report;

pub use config::{Algorithm, ExperimentConfig, ModelSpec, TaskSpec};
pub use experiment::{
    clear_pretrain_cache, load_task, pretrain_key, pretrain_seed, run_experiment, run_seed, ExperimentResult,
    Pretrained, RunRecord, SeedResult, SummaryRow, HELDOUT_BLEU, ONLINE_BLEU, PER_SENTENCE_BLEU,
};
pub use metrics::{
    confidence_interval, delta_metric, heldout_bleu_metric, per_sentence_bleu_metric, sampled_bleu_at,
};
pub use report::{emit_report, ReportFormat, SweepPoint};
