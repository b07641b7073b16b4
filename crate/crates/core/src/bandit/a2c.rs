use serde::{Deserialize, Serialize};

use super::{apply_mean_gradients, BanditItem};
use crate::diffcore::{Adam, AdamConfig, Gradients, SeededRng, Tensor};
use crate::error::{ensure, Result};
use crate::exec::map_indexed;
use crate::rater::RewardSource;
use crate::seq2seq::{SampledTranslation, Seq2Seq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    /// Global gradient-norm clip applied to each update; off when `None`.
    pub clip_norm: Option<f64>,
}

impl Default for BanditConfig {
    fn default() -> Self {
        BanditConfig {
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            batch_size: 64,
            clip_norm: None,
        }
    }
}

impl BanditConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, "bandit batch_size must be >= 1");
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            ensure!(lr > 0.0 && lr.is_finite(), "{name} must be positive, got {lr}");
        }
        if let Some(c) = self.clip_norm {
            ensure!(c > 0.0, "clip_norm must be positive, got {c}");
        }
        Ok(())
    }
}

pub struct A2cOptimizers {
    pub actor: Adam,
    pub critic: Adam,
    pub clip_norm: Option<f64>,
}

impl A2cOptimizers {
    pub fn new(config: &BanditConfig) -> Self {
        A2cOptimizers {
            actor: Adam::new(AdamConfig::with_lr(config.actor_lr)),
            critic: Adam::new(AdamConfig::with_lr(config.critic_lr)),
            clip_norm: config.clip_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub item: usize,
    pub round: u64,
    /// Sampled tokens, including the terminating EOS if one was drawn.
    pub translation: Vec<u32>,
    pub reward: f64,
    /// `V(ŷ_<t)` for each step; all zero without a critic.
    pub values: Vec<f64>,
    /// `R − V(ŷ_<t)`.
    pub advantages: Vec<f64>,
    /// `−Σ_t (R − V_t) log P(ŷ_t | ŷ_<t, x)`.
    pub actor_loss: f64,
    /// `½ Σ_t (V_t − R)²`.
    pub critic_loss: f64,
}

pub fn critic_values(critic: &Seq2Seq, src: &[u32], translation: &[u32]) -> Result<Vec<f64>> {
    critic.values(src, translation)
}

/// Critic regression loss `½ Σ_t (V(ŷ_<t) − R)²`, the values, and the
/// gradient with respect to the critic's parameters.
pub fn critic_loss_gradients(
    critic: &Seq2Seq,
    src: &[u32],
    translation: &[u32],
    reward: f64,
) -> Result<(f64, Vec<f64>, Gradients)> {
    let mut g = critic.graph();
    let nodes = g.values(src, translation)?;
    let t = &mut g.tape;
    let v = t.concat(&nodes);
    let target = t.input(Tensor::vector(vec![reward; nodes.len()]));
    let diff = t.sub(v, target);
    let sq = t.dot(diff, diff);
    let loss = t.scale(sq, 0.5);
    let grads = t.gradients(loss)?;
    let values = t.value(v).data().to_vec();
    Ok((t.scalar(loss), values, grads))
}

/// Draws one translation and returns the gradient of
/// `−Σ_t (R − b_t) log P(ŷ_t | ŷ_<t, x)`, where `R = reward(ŷ)` and
/// `b = baseline(ŷ, R)` gives one value per step (`b_t` may only depend on
/// `ŷ_<t`). Negating the result gives a single-sample estimate of the
/// policy gradient.
pub fn actor_sample_gradient(
    model: &Seq2Seq,
    src: &[u32],
    rng: &mut SeededRng,
    max_len: usize,
    reward: impl FnOnce(&[u32]) -> Result<f64>,
    baseline: impl FnOnce(&[u32], f64) -> Result<Vec<f64>>,
) -> Result<(SampledTranslation, f64, Vec<f64>, Gradients)> {
    let mut g = model.graph();
    let sampled = g.sample(src, rng, max_len)?;
    let tokens = &sampled.translation.tokens;
    let r = reward(tokens)?;
    let b = baseline(tokens, r)?;
    ensure!(
        b.len() == tokens.len(),
        "baseline gave {} values for {} steps",
        b.len(),
        tokens.len()
    );
    let terms: Vec<_> = sampled
        .log_prob_nodes
        .iter()
        .zip(&b)
        .map(|(&n, &v)| (n, -(r - v)))
        .collect();
    let loss = g.tape.weighted_sum(&terms).expect("at least one sampled step");
    let grads = g.tape.gradients(loss)?;
    Ok((sampled.translation, r, b, grads))
}

struct SentenceResult {
    outcome: StepOutcome,
    actor: Gradients,
    critic: Option<Gradients>,
}

fn sentence_pass(
    actor: &Seq2Seq,
    critic: Option<&Seq2Seq>,
    it: &BanditItem<'_>,
    rewards: &dyn RewardSource,
    sample_root: &SeededRng,
) -> Result<SentenceResult> {
    let mut rng = sample_root.fork_index(it.round);
    let mut critic_out = None;
    let (translation, reward, values, grads) = actor_sample_gradient(
        actor,
        it.src,
        &mut rng,
        actor.config.decode_limit(it.src.len()),
        |y| rewards.reward(it.item, it.round, y),
        |y, r| match critic {
            Some(c) => {
                let (loss, values, g) = critic_loss_gradients(c, it.src, y, r)?;
                critic_out = Some((loss, g));
                Ok(values)
            }
            None => Ok(vec![0.0; y.len()]),
        },
    )?;
    let advantages: Vec<f64> = values.iter().map(|v| reward - v).collect();
    let actor_loss = -advantages
        .iter()
        .zip(&translation.log_probs)
        .map(|(a, lp)| a * lp)
        .sum::<f64>();
    let (critic_loss, critic_grads) = match critic_out {
        Some((l, g)) => (l, Some(g)),
        None => (0.5 * reward * reward * values.len() as f64, None),
    };
    Ok(SentenceResult {
        outcome: StepOutcome {
            item: it.item,
            round: it.round,
            translation: translation.tokens,
            reward,
            values,
            advantages,
            actor_loss,
            critic_loss,
        },
        actor: grads,
        critic: critic_grads,
    })
}

fn collect(results: Vec<Result<SentenceResult>>) -> Result<(Vec<StepOutcome>, Vec<Gradients>, Vec<Gradients>)> {
    let mut outcomes = Vec::with_capacity(results.len());
    let mut actor = Vec::with_capacity(results.len());
    let mut critic = Vec::new();
    for r in results {
        let r = r?;
        outcomes.push(r.outcome);
        actor.push(r.actor);
        critic.extend(r.critic);
    }
    Ok((outcomes, actor, critic))
}

/// One advantage actor-critic update over `batch`: every sentence draws
/// one translation from the actor, gets a reward, and the same sample
/// drives both the actor update (advantage-weighted log-likelihood, values
/// held constant) and the critic regression. The actor steps first.
///
/// The sample for round `r` comes from `sample_root.fork_index(r)`, so the
/// result does not depend on how the batch is scheduled.
pub fn a2c_batch_step(
    actor: &mut Seq2Seq,
    critic: &mut Seq2Seq,
    batch: &[BanditItem<'_>],
    rewards: &dyn RewardSource,
    opt: &mut A2cOptimizers,
    sample_root: &SeededRng,
) -> Result<Vec<StepOutcome>> {
    ensure!(!batch.is_empty(), "empty bandit batch");
    ensure!(
        actor.config.src_vocab_size == critic.config.src_vocab_size
            && actor.config.tgt_vocab_size == critic.config.tgt_vocab_size,
        "actor and critic vocabularies differ"
    );
    let (a, c): (&Seq2Seq, &Seq2Seq) = (actor, critic);
    let results = map_indexed(batch.len(), |i| sentence_pass(a, Some(c), &batch[i], rewards, sample_root));
    let (outcomes, actor_grads, critic_grads) = collect(results)?;
    apply_mean_gradients(&mut actor.params, &mut opt.actor, &actor_grads, opt.clip_norm)?;
    apply_mean_gradients(&mut critic.params, &mut opt.critic, &critic_grads, opt.clip_norm)?;
    Ok(outcomes)
}

/// The same update with a zero baseline and no critic.
pub fn reinforce_step(
    actor: &mut Seq2Seq,
    batch: &[BanditItem<'_>],
    rewards: &dyn RewardSource,
    opt: &mut Adam,
    clip_norm: Option<f64>,
    sample_root: &SeededRng,
) -> Result<Vec<StepOutcome>> {
    ensure!(!batch.is_empty(), "empty bandit batch");
    let a: &Seq2Seq = actor;
    let results = map_indexed(batch.len(), |i| sentence_pass(a, None, &batch[i], rewards, sample_root));
    let (outcomes, actor_grads, _) = collect(results)?;
    apply_mean_gradients(&mut actor.params, opt, &actor_grads, clip_norm)?;
    Ok(outcomes)
}
