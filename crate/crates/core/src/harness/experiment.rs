use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Algorithm, ExperimentConfig, TaskSpec};
use super::metrics::{confidence_interval, delta_metric, heldout_bleu_metric, mean, sample_bleu, sampled_bleu_at};
use super::report;
use crate::bandit::{
    a2c_batch_step, pretrain_critic, pretrain_supervised, reinforce_step, supervised_finetune_step,
    A2cOptimizers, BanditItem, CriticPretrainLog, EpochLog,
};
use crate::data::{gen_cipher_corpus, load_parallel_text, split_corpus, Corpus, SentencePair, Split};
use crate::diffcore::{load_params, save_params, Adam, AdamConfig, ParamStore, SeededRng};
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::rater::{RaterConfig, SimulatedRater};
use crate::seq2seq::{Head, Seq2Seq};

pub const PER_SENTENCE_BLEU: &str = "per_sentence_bleu";
pub const HELDOUT_BLEU: &str = "heldout_bleu";
pub const ONLINE_BLEU: &str = "online_bleu";

/// One row of the per-step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub phase: String,
    pub epoch: usize,
    pub step: usize,
    /// Running mean of un-perturbed sentence BLEU of the samples drawn so far
    /// in this epoch.
    pub online_reward: Option<f64>,
    /// Mean reward the learner actually received in this step.
    pub rated_reward: Option<f64>,
    pub heldout_bleu: Option<f64>,
    /// Training loss for pretraining phases, critic loss for bandit steps.
    pub loss: Option<f64>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment_id: String,
    pub preset: String,
    pub seed: String,
    pub metric: String,
    pub phase: String,
    pub value: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub per_sentence_ref: f64,
    pub per_sentence_after: f64,
    pub heldout_ref: f64,
    pub heldout_after: f64,
    /// Mean un-perturbed BLEU of the samples drawn in each bandit epoch.
    pub online_by_epoch: Vec<f64>,
    pub records: Vec<RunRecord>,
}

impl SeedResult {
    pub fn per_sentence_delta(&self) -> f64 {
        delta_metric(self.per_sentence_after, self.per_sentence_ref)
    }

    pub fn heldout_delta(&self) -> f64 {
        delta_metric(self.heldout_after, self.heldout_ref)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// In config seed order; failed seeds carry their error message.
    pub seeds: Vec<(u64, std::result::Result<SeedResult, String>)>,
}

impl ExperimentResult {
    pub fn succeeded(&self) -> Vec<&SeedResult> {
        self.seeds.iter().filter_map(|(_, r)| r.as_ref().ok()).collect()
    }

    pub fn per_sentence_deltas(&self) -> Vec<f64> {
        self.succeeded().iter().map(|r| r.per_sentence_delta()).collect()
    }

    pub fn heldout_deltas(&self) -> Vec<f64> {
        self.succeeded().iter().map(|r| r.heldout_delta()).collect()
    }

    pub fn records(&self) -> Vec<RunRecord> {
        self.succeeded().iter().flat_map(|r| r.records.iter().cloned()).collect()
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        let cfg = &self.config;
        let row = |seed: String, metric: &str, phase: &str, value: f64, ci: Option<(f64, f64)>| SummaryRow {
            experiment_id: cfg.experiment_id.clone(),
            preset: cfg.preset.clone(),
            seed,
            metric: metric.to_string(),
            phase: phase.to_string(),
            value,
            ci_low: ci.map(|(m, h)| m - h),
            ci_high: ci.map(|(m, h)| m + h),
        };
        let mut rows = Vec::new();
        for (seed, r) in &self.seeds {
            match r {
                Ok(r) => {
                    for (metric, before, after) in [
                        (PER_SENTENCE_BLEU, r.per_sentence_ref, r.per_sentence_after),
                        (HELDOUT_BLEU, r.heldout_ref, r.heldout_after),
                    ] {
                        rows.push(row(seed.to_string(), metric, "reference", before, None));
                        rows.push(row(seed.to_string(), metric, "final", after, None));
                        rows.push(row(seed.to_string(), metric, "delta", delta_metric(after, before), None));
                    }
                    for (e, v) in r.online_by_epoch.iter().enumerate() {
                        rows.push(row(seed.to_string(), ONLINE_BLEU, &format!("epoch{}", e + 1), *v, None));
                    }
                }
                Err(_) => rows.push(row(seed.to_string(), "status", "failed", f64::NAN, None)),
            }
        }
        let ok = self.succeeded();
        if !ok.is_empty() {
            let mut agg = |metric: &str, phase: &str, values: Vec<f64>| {
                let ci = confidence_interval(&values).ok();
                rows.push(row("mean".into(), metric, phase, mean(&values), ci));
            };
            for (metric, f) in [
                (PER_SENTENCE_BLEU, (|r: &SeedResult| (r.per_sentence_ref, r.per_sentence_after)) as fn(&SeedResult) -> (f64, f64)),
                (HELDOUT_BLEU, |r: &SeedResult| (r.heldout_ref, r.heldout_after)),
            ] {
                agg(metric, "reference", ok.iter().map(|r| f(r).0).collect());
                agg(metric, "final", ok.iter().map(|r| f(r).1).collect());
                agg(metric, "delta", ok.iter().map(|r| delta_metric(f(r).1, f(r).0)).collect());
            }
            let epochs = ok[0].online_by_epoch.len();
            for e in 0..epochs {
                agg(ONLINE_BLEU, &format!("epoch{}", e + 1), ok.iter().map(|r| r.online_by_epoch[e]).collect());
            }
        }
        rows
    }

    /// Writes `summary.csv`, `records.csv`, `config.json` and
    /// `online_reward.svg` into `dir`.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        report::write_summary_csv(&self.summary_rows(), dir.join("summary.csv"))?;
        let records = self.records();
        report::write_records_csv(&records, dir.join("records.csv"))?;
        fs::write(dir.join("online_reward.svg"), report::online_reward_svg(&records))?;
        fs::write(dir.join("config.json"), self.config.to_json())?;
        Ok(())
    }
}

pub fn load_task(task: &TaskSpec) -> Result<Corpus> {
    match task {
        TaskSpec::Cipher { .. } => Ok(gen_cipher_corpus(&task.cipher_spec().unwrap())?.0),
        TaskSpec::Text {
            src,
            tgt,
            vocab_cap,
            fractions,
            split_seed,
        } => {
            let (corpus, _) = load_parallel_text(src, tgt, *vocab_cap)?;
            split_corpus(corpus, *fractions, *split_seed)
        }
    }
}

/// Pretrained actor and critic for one seed.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub actor: ParamStore,
    pub critic: ParamStore,
    pub pretrain_log: Vec<EpochLog>,
    pub critic_log: Vec<CriticPretrainLog>,
}

fn memory_cache() -> &'static Mutex<HashMap<String, Arc<Pretrained>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<Pretrained>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Content hash of everything pretraining depends on.
pub fn pretrain_key(cfg: &ExperimentConfig, seed: u64) -> String {
    let identity = serde_json::json!({
        "task": cfg.task,
        "model": cfg.model,
        "pretrain": cfg.pretrain,
        "critic_pretrain": cfg.critic_pretrain,
        "seed": seed,
    });
    hex::encode(Sha256::digest(identity.to_string().as_bytes()))
}

#[derive(Serialize, Deserialize)]
struct PretrainLogs {
    pretrain: Vec<EpochLog>,
    critic: Vec<CriticPretrainLog>,
}

fn load_from_disk(dir: &Path, key: &str) -> Option<Pretrained> {
    let actor = load_params(dir.join(format!("{key}.actor.bsq"))).ok()?;
    let critic = load_params(dir.join(format!("{key}.critic.bsq"))).ok()?;
    let logs: PretrainLogs = serde_json::from_str(&fs::read_to_string(dir.join(format!("{key}.json"))).ok()?).ok()?;
    Some(Pretrained {
        actor,
        critic,
        pretrain_log: logs.pretrain,
        critic_log: logs.critic,
    })
}

fn save_to_disk(dir: &Path, key: &str, p: &Pretrained) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_params(&p.actor, dir.join(format!("{key}.actor.bsq")))?;
    save_params(&p.critic, dir.join(format!("{key}.critic.bsq")))?;
    let logs = PretrainLogs {
        pretrain: p.pretrain_log.clone(),
        critic: p.critic_log.clone(),
    };
    fs::write(dir.join(format!("{key}.json")), serde_json::to_string(&logs)?)?;
    Ok(())
}

pub fn clear_pretrain_cache() {
    memory_cache().lock().unwrap().clear();
}

/// Supervised pretraining of the actor on the supervised split, then
/// critic pretraining on samples from it scored by the un-perturbed rater.
/// Results are cached in memory and, with `cache_dir`, on disk.
pub fn pretrain_seed(cfg: &ExperimentConfig, corpus: &Corpus, seed: u64) -> Result<Arc<Pretrained>> {
    let key = pretrain_key(cfg, seed);
    if let Some(p) = memory_cache().lock().unwrap().get(&key) {
        return Ok(p.clone());
    }
    if let Some(dir) = &cfg.cache_dir {
        if let Some(p) = load_from_disk(dir, &key) {
            let p = Arc::new(p);
            memory_cache().lock().unwrap().insert(key, p.clone());
            return Ok(p);
        }
    }

    let root = SeededRng::new(seed);
    let sup = corpus.split(Split::Supervised);
    let dev = corpus.split(Split::Dev);
    let actor_cfg = cfg.seq2seq_config(corpus.src_vocab.len(), corpus.tgt_vocab.len());
    let mut actor = Seq2Seq::new(actor_cfg, &mut root.fork("actor-init"))?;
    let pretrain_log = pretrain_supervised(&mut actor, &sup, &dev, &cfg.pretrain, &root.fork("pretrain"))?;

    let mut critic = Seq2Seq::new(actor_cfg.with_head(Head::ScalarValue), &mut root.fork("critic-init"))?;
    let refs: Vec<Vec<u32>> = sup.iter().map(|p| p.tgt.clone()).collect();
    let expert = SimulatedRater::new(refs, RaterConfig::expert())?;
    let sources: Vec<&[u32]> = sup.iter().map(|p| p.src.as_slice()).collect();
    let critic_log = pretrain_critic(
        &mut critic,
        &actor,
        &sources,
        &expert,
        &cfg.critic_pretrain,
        &root.fork("critic-pretrain"),
    )?;

    let p = Pretrained {
        actor: actor.params,
        critic: critic.params,
        pretrain_log,
        critic_log,
    };
    if let Some(dir) = &cfg.cache_dir {
        save_to_disk(dir, &key, &p)?;
    }
    let p = Arc::new(p);
    memory_cache().lock().unwrap().entry(key).or_insert_with(|| p.clone());
    Ok(p)
}

/// The noise stream of seed `seed` under `rater`.
fn seeded_rater(rater: &RaterConfig, seed: u64) -> RaterConfig {
    RaterConfig {
        perturbations: rater.perturbations.clone(),
        noise_seed: SeededRng::new(rater.noise_seed).fork_index(seed).seed(),
    }
}

pub fn run_seed(cfg: &ExperimentConfig, corpus: &Corpus, seed: u64) -> Result<SeedResult> {
    let start = Instant::now();
    let root = SeededRng::new(seed);
    let pre = pretrain_seed(cfg, corpus, seed)?;
    let actor_cfg = cfg.seq2seq_config(corpus.src_vocab.len(), corpus.tgt_vocab.len());
    let mut actor = Seq2Seq::from_params(actor_cfg, pre.actor.clone())?;
    let mut critic = Seq2Seq::from_params(actor_cfg.with_head(Head::ScalarValue), pre.critic.clone())?;

    let mut records = Vec::new();
    for log in &pre.pretrain_log {
        records.push(RunRecord {
            seed,
            phase: "pretrain".into(),
            epoch: log.epoch,
            step: log.epoch,
            online_reward: None,
            rated_reward: None,
            heldout_bleu: None,
            loss: Some(log.train_loss),
            wall_clock_s: 0.0,
        });
    }
    for log in &pre.critic_log {
        records.push(RunRecord {
            seed,
            phase: "critic_pretrain".into(),
            epoch: log.epoch,
            step: log.epoch,
            online_reward: None,
            rated_reward: None,
            heldout_bleu: None,
            loss: Some(log.loss),
            wall_clock_s: 0.0,
        });
    }

    let bandit = corpus.split(Split::Bandit);
    let test = corpus.split(Split::Test);
    if bandit.is_empty() || test.is_empty() {
        return Err(Error::contract("bandit and test splits must be non-empty"));
    }
    let n = bandit.len();
    let order_root = root.fork("bandit-order");
    let orders: Vec<Vec<usize>> = (0..cfg.bandit_epochs.max(1))
        .map(|e| {
            let mut o: Vec<usize> = (0..n).collect();
            order_root.fork_index(e as u64).shuffle(&mut o);
            o
        })
        .collect();
    let samples = root.fork("bandit-samples");
    let first_pairs: Vec<&SentencePair> = orders[0].iter().map(|&i| bandit[i]).collect();
    let first_rounds: Vec<u64> = (0..n as u64).collect();

    let per_sentence_ref = sampled_bleu_at(&actor, &first_pairs, &first_rounds, &samples)?;
    let heldout_ref = heldout_bleu_metric(&actor, &test)?;

    let rater_cfg = seeded_rater(&cfg.rater, seed);
    let refs: Vec<Vec<u32>> = bandit.iter().map(|p| p.tgt.clone()).collect();
    let rater = SimulatedRater::new(refs, rater_cfg)?;
    let batch = cfg.bandit.batch_size;
    let mut a2c_opt = A2cOptimizers::new(&cfg.bandit);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.bandit.actor_lr));

    let mut online_by_epoch = Vec::with_capacity(cfg.bandit_epochs);
    let mut heldout_after = heldout_ref;
    let mut step = 0;
    for (e, order) in orders.iter().enumerate().take(cfg.bandit_epochs) {
        let items: Vec<BanditItem> = order
            .iter()
            .enumerate()
            .map(|(k, &i)| BanditItem {
                item: i,
                round: (e * n + k) as u64,
                src: &bandit[i].src,
            })
            .collect();
        let (mut bleu_sum, mut count) = (0.0, 0usize);
        for chunk in items.chunks(batch) {
            step += 1;
            let (rated, loss) = match cfg.algorithm {
                Algorithm::A2c | Algorithm::Reinforce => {
                    let outcomes = if cfg.algorithm == Algorithm::A2c {
                        a2c_batch_step(&mut actor, &mut critic, chunk, &rater, &mut a2c_opt, &samples)?
                    } else {
                        reinforce_step(&mut actor, chunk, &rater, &mut adam, cfg.bandit.clip_norm, &samples)?
                    };
                    for o in &outcomes {
                        bleu_sum += sample_bleu(&o.translation, bandit[o.item])?;
                        count += 1;
                    }
                    let k = outcomes.len() as f64;
                    (
                        Some(outcomes.iter().map(|o| o.reward).sum::<f64>() / k),
                        Some(outcomes.iter().map(|o| o.critic_loss).sum::<f64>() / k),
                    )
                }
                Algorithm::Supervised => {
                    let pairs: Vec<&SentencePair> = chunk.iter().map(|it| bandit[it.item]).collect();
                    let loss = supervised_finetune_step(&mut actor, &pairs, &mut adam, cfg.bandit.clip_norm)?;
                    (None, Some(loss))
                }
            };
            records.push(RunRecord {
                seed,
                phase: "bandit".into(),
                epoch: e + 1,
                step,
                online_reward: (count > 0).then(|| bleu_sum / count as f64),
                rated_reward: rated,
                heldout_bleu: None,
                loss,
                wall_clock_s: start.elapsed().as_secs_f64(),
            });
        }
        let last_epoch = e + 1 == cfg.bandit_epochs;
        if cfg.heldout_every_epoch || last_epoch {
            heldout_after = heldout_bleu_metric(&actor, &test)?;
            if let Some(r) = records.last_mut() {
                r.heldout_bleu = Some(heldout_after);
            }
        }
        let epoch_mean = if count > 0 {
            bleu_sum / count as f64
        } else {
            sampled_bleu_at(&actor, &first_pairs, &first_rounds, &samples)?
        };
        online_by_epoch.push(epoch_mean);
    }
    let per_sentence_after = online_by_epoch.last().copied().unwrap_or(per_sentence_ref);

    Ok(SeedResult {
        seed,
        per_sentence_ref,
        per_sentence_after,
        heldout_ref,
        heldout_after,
        online_by_epoch,
        records,
    })
}

/// Runs every seed (in parallel when enabled). A failing seed is
/// reported in the result; the others still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let corpus = load_task(&cfg.task)?;
    let outcomes = map_indexed(cfg.seeds.len(), |i| {
        run_seed(cfg, &corpus, cfg.seeds[i]).map_err(|e| e.to_string())
    });
    let result = ExperimentResult {
        config: cfg.clone(),
        seeds: cfg.seeds.iter().copied().zip(outcomes).collect(),
    };
    if let Some(dir) = &cfg.output_dir {
        result.write_outputs(dir)?;
    }
    Ok(result)
}
