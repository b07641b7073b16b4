use serde::{Deserialize, Serialize};

use super::a2c::critic_loss_gradients;
use super::apply_mean_gradients;
use crate::data::SentencePair;
use crate::diffcore::{Adam, AdamConfig, Gradients, SeededRng};
use crate::error::{ensure, Result};
use crate::exec::map_indexed;
use crate::rater::RewardSource;
use crate::seq2seq::Seq2Seq;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// First epoch (1-indexed) at which a rise in dev perplexity halves the rate.
    pub decay_start_epoch: usize,
    pub decay_factor: f64,
    pub clip_norm: Option<f64>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 10,
            batch_size: 64,
            lr: 1e-3,
            decay_start_epoch: 5,
            decay_factor: 0.5,
            clip_norm: None,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, "batch_size must be >= 1");
        ensure!(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive, got {}", self.lr);
        ensure!(
            self.decay_factor > 0.0 && self.decay_factor <= 1.0,
            "decay_factor must be in (0, 1], got {}",
            self.decay_factor
        );
        if let Some(c) = self.clip_norm {
            ensure!(c > 0.0, "clip_norm must be positive, got {c}");
        }
        Ok(())
    }
}

/// Halves (by `factor`) the learning rate whenever dev perplexity rises,
/// but only from `start_epoch` on.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    lr: f64,
    start_epoch: usize,
    factor: f64,
    last: Option<f64>,
}

impl LrSchedule {
    pub fn new(lr: f64, start_epoch: usize, factor: f64) -> Self {
        LrSchedule {
            lr,
            start_epoch,
            factor,
            last: None,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records the dev perplexity after `epoch` (1-indexed) and returns the
    /// rate for the next epoch.
    pub fn observe(&mut self, epoch: usize, dev_ppl: f64) -> f64 {
        if let Some(prev) = self.last {
            if epoch >= self.start_epoch && dev_ppl > prev {
                self.lr *= self.factor;
            }
        }
        self.last = Some(dev_ppl);
        self.lr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sentence negative log-likelihood over the epoch's batches.
    pub train_loss: f64,
    pub dev_perplexity: f64,
    /// Rate used during this epoch.
    pub lr: f64,
}

/// Negative log-likelihood of `tgt` and its gradient.
pub fn mle_loss_gradients(model: &Seq2Seq, src: &[u32], tgt: &[u32]) -> Result<(f64, Gradients)> {
    let mut g = model.graph();
    let lp = g.sequence_log_prob(src, tgt)?;
    let loss = g.tape.scale(lp, -1.0);
    let grads = g.tape.gradients(loss)?;
    Ok((g.tape.scalar(loss), grads))
}

/// One MLE mini-batch step on reference translations. Returns the mean
/// per-sentence loss before the update.
pub fn supervised_finetune_step(
    model: &mut Seq2Seq,
    batch: &[&SentencePair],
    opt: &mut Adam,
    clip_norm: Option<f64>,
) -> Result<f64> {
    ensure!(!batch.is_empty(), "empty supervised batch");
    let shared: &Seq2Seq = model;
    let results = map_indexed(batch.len(), |i| mle_loss_gradients(shared, &batch[i].src, &batch[i].tgt));
    let mut losses = 0.0;
    let mut grads = Vec::with_capacity(results.len());
    for r in results {
        let (l, g) = r?;
        losses += l;
        grads.push(g);
    }
    apply_mean_gradients(&mut model.params, opt, &grads, clip_norm)?;
    Ok(losses / batch.len() as f64)
}

/// `exp(total NLL / total target tokens)`, EOS included.
pub fn dev_perplexity(model: &Seq2Seq, pairs: &[&SentencePair]) -> Result<f64> {
    ensure!(!pairs.is_empty(), "empty development set");
    let nll = map_indexed(pairs.len(), |i| model.sequence_log_prob(&pairs[i].src, &pairs[i].tgt));
    let mut total = 0.0;
    for lp in nll {
        total -= lp?;
    }
    let tokens: usize = pairs.iter().map(|p| p.tgt.len()).sum();
    Ok((total / tokens as f64).exp())
}

pub fn pretrain_supervised(
    model: &mut Seq2Seq,
    train: &[&SentencePair],
    dev: &[&SentencePair],
    config: &PretrainConfig,
    rng: &SeededRng,
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    ensure!(!train.is_empty(), "empty supervised training set");
    ensure!(!dev.is_empty(), "empty development set");
    let mut opt = Adam::new(AdamConfig::with_lr(config.lr));
    let mut schedule = LrSchedule::new(config.lr, config.decay_start_epoch, config.decay_factor);
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let lr = schedule.lr();
        opt.set_lr(lr);
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.fork_index(epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&SentencePair> = chunk.iter().map(|&i| train[i]).collect();
            loss_sum += supervised_finetune_step(model, &batch, &mut opt, config.clip_norm)? * batch.len() as f64;
        }
        let dev_ppl = dev_perplexity(model, dev)?;
        schedule.observe(epoch, dev_ppl);
        logs.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            dev_perplexity: dev_ppl,
            lr,
        });
    }
    Ok(logs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticPretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
}

impl Default for CriticPretrainConfig {
    fn default() -> Self {
        CriticPretrainConfig {
            epochs: 2,
            batch_size: 64,
            lr: 1e-3,
            clip_norm: None,
        }
    }
}

impl CriticPretrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, "critic batch_size must be >= 1");
        ensure!(self.lr > 0.0 && self.lr.is_finite(), "critic lr must be positive, got {}", self.lr);
        if let Some(c) = self.clip_norm {
            ensure!(c > 0.0, "clip_norm must be positive, got {c}");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticPretrainLog {
    pub epoch: usize,
    /// Mean over sentences of `½ Σ_t (V_t − R)²`.
    pub loss: f64,
    /// Mean over sentences of the per-step squared error.
    pub mse: f64,
}

/// Regresses the critic onto rewards of translations sampled from the
/// frozen `actor`. Item `i` of `sources` is rated as reward-source item `i`.
pub fn pretrain_critic(
    critic: &mut Seq2Seq,
    actor: &Seq2Seq,
    sources: &[&[u32]],
    rewards: &dyn RewardSource,
    config: &CriticPretrainConfig,
    rng: &SeededRng,
) -> Result<Vec<CriticPretrainLog>> {
    config.validate()?;
    ensure!(!sources.is_empty(), "no training sentences for the critic");
    let mut opt = Adam::new(AdamConfig::with_lr(config.lr));
    let n = sources.len();
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        rng.fork("order").fork_index(epoch as u64).shuffle(&mut order);
        let samples = rng.fork("samples");
        let (mut loss_sum, mut mse_sum) = (0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let frozen: &Seq2Seq = critic;
            let results = map_indexed(chunk.len(), |k| {
                let i = chunk[k];
                let round = (epoch * n + i) as u64;
                let src = sources[i];
                let mut r = samples.fork_index(round);
                let sampled = actor.sample(src, &mut r, actor.config.decode_limit(src.len()))?;
                let reward = rewards.reward(i, round, &sampled.tokens)?;
                critic_loss_gradients(frozen, src, &sampled.tokens, reward)
            });
            let mut grads = Vec::with_capacity(chunk.len());
            for r in results {
                let (loss, values, g) = r?;
                loss_sum += loss;
                mse_sum += 2.0 * loss / values.len() as f64;
                grads.push(g);
            }
            apply_mean_gradients(&mut critic.params, &mut opt, &grads, config.clip_norm)?;
        }
        logs.push(CriticPretrainLog {
            epoch: epoch + 1,
            loss: loss_sum / n as f64,
            mse: mse_sum / n as f64,
        });
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::rater::ConstantReward;
    use crate::seq2seq::{Head, Seq2SeqConfig, EOS};

    #[test]
    fn schedule_halves_on_rises_from_start_epoch() {
        let mut s = LrSchedule::new(1.0, 5, 0.5);
        let ppl = [10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0];
        let lrs: Vec<f64> = ppl.iter().enumerate().map(|(e, &p)| s.observe(e + 1, p)).collect();
        assert_eq!(lrs, vec![1.0, 1.0, 1.0, 1.0, 0.5, 0.25, 0.125]);
        let mut s = LrSchedule::new(1.0, 5, 0.5);
        for (e, p) in [5.0, 4.0, 3.0, 2.0, 1.0, 0.5].iter().enumerate() {
            assert_eq!(s.observe(e + 1, *p), 1.0);
        }
    }

    fn pair(src: Vec<u32>, tgt: Vec<u32>) -> SentencePair {
        SentencePair { src, tgt, split: Split::Supervised }
    }

    #[test]
    fn memorizes_one_pair() {
        let cfg = Seq2SeqConfig::new(4, 4, 8, 8);
        let mut m = Seq2Seq::new(cfg, &mut SeededRng::new(0)).unwrap();
        let p = pair(vec![3], vec![3, EOS]);
        let pc = PretrainConfig {
            epochs: 200,
            lr: 1e-2,
            ..Default::default()
        };
        pretrain_supervised(&mut m, &[&p], &[&p], &pc, &SeededRng::new(1)).unwrap();
        assert!(m.sequence_log_prob(&p.src, &p.tgt).unwrap() > 0.99f64.ln());
    }

    #[test]
    fn empty_corpus_rejected() {
        let cfg = Seq2SeqConfig::new(4, 4, 4, 4);
        let mut m = Seq2Seq::new(cfg, &mut SeededRng::new(0)).unwrap();
        let p = pair(vec![3], vec![3, EOS]);
        let pc = PretrainConfig::default();
        assert!(pretrain_supervised(&mut m, &[], &[&p], &pc, &SeededRng::new(1)).is_err());
        let mut critic = Seq2Seq::new(cfg.with_head(Head::ScalarValue), &mut SeededRng::new(2)).unwrap();
        let cc = CriticPretrainConfig::default();
        assert!(pretrain_critic(&mut critic, &m, &[], &ConstantReward(0.5), &cc, &SeededRng::new(3)).is_err());
    }

    #[test]
    fn finetune_step_lowers_batch_loss() {
        let cfg = Seq2SeqConfig::new(6, 6, 4, 4);
        let mut m = Seq2Seq::new(cfg, &mut SeededRng::new(4)).unwrap();
        let a = pair(vec![3, 4], vec![5, 4, EOS]);
        let b = pair(vec![5], vec![3, EOS]);
        let before = m.sequence_log_prob(&a.src, &a.tgt).unwrap() + m.sequence_log_prob(&b.src, &b.tgt).unwrap();
        let mut opt = Adam::new(AdamConfig::with_lr(1e-3));
        let loss = supervised_finetune_step(&mut m, &[&a, &b], &mut opt, None).unwrap();
        assert!((loss + before / 2.0).abs() < 1e-12);
        let after = m.sequence_log_prob(&a.src, &a.tgt).unwrap() + m.sequence_log_prob(&b.src, &b.tgt).unwrap();
        assert!(after > before);
    }

    #[test]
    fn critic_learns_constant_reward() {
        let cfg = Seq2SeqConfig::new(6, 6, 4, 4);
        let actor = Seq2Seq::new(cfg, &mut SeededRng::new(5)).unwrap();
        let mut critic = Seq2Seq::new(cfg.with_head(Head::ScalarValue), &mut SeededRng::new(6)).unwrap();
        let srcs: Vec<Vec<u32>> = (0..16).map(|i| vec![3 + (i % 3), 3 + (i % 2)]).collect();
        let views: Vec<&[u32]> = srcs.iter().map(Vec::as_slice).collect();
        let cc = CriticPretrainConfig {
            epochs: 60,
            batch_size: 8,
            lr: 1e-2,
            clip_norm: None,
        };
        let logs = pretrain_critic(&mut critic, &actor, &views, &ConstantReward(0.37), &cc, &SeededRng::new(7)).unwrap();
        assert!(logs.last().unwrap().loss < logs[0].loss * 0.5);
        let mut rng = SeededRng::new(8);
        for src in &views {
            let y = actor.sample(src, &mut rng, 9).unwrap();
            for v in critic.values(src, &y.tokens).unwrap() {
                assert!((v - 0.37).abs() < 0.02, "{v}");
            }
        }
    }
}
