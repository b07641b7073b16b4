//! Training algorithms: maximum-likelihood pretraining, critic pretraining,
//! the advantage actor-critic bandit loop, a REINFORCE baseline, supervised
//! fine-tuning and an exact policy-gradient enumerator for tiny instances.
//!
//! Learners in the bandit phase only ever receive [`BanditItem`]s (a source
//! sentence plus an opaque item index) and a [`RewardSource`]. References
//! live behind the reward source.
//!
//! [`RewardSource`]: crate::rater::RewardSource

mod a2c;
mod oracle;
mod pretrain;

pub use a2c::{
    a2c_batch_step, actor_sample_gradient, critic_loss_gradients, critic_values, reinforce_step,
    A2cOptimizers, BanditConfig, StepOutcome,
};
pub use oracle::{enumerate_sequences, exact_policy_gradient, MAX_ENUMERATION};
pub use pretrain::{
    dev_perplexity, mle_loss_gradients, pretrain_critic, pretrain_supervised,
    supervised_finetune_step, CriticPretrainConfig, CriticPretrainLog, EpochLog, LrSchedule,
    PretrainConfig,
};

use crate::diffcore::{Adam, Gradients, ParamStore};
use crate::error::Result;

/// One bandit round as seen by the learner.
#[derive(Debug, Clone, Copy)]
pub struct BanditItem<'a> {
    /// Key the reward source uses to find its private reference.
    pub item: usize,
    /// Global round number; selects the sampling and rating substreams.
    pub round: u64,
    pub src: &'a [u32],
}

/// Sums per-example gradients in order, divides by the count, and applies
/// one optimizer step. Returns the pre-clip gradient norm.
pub(crate) fn apply_mean_gradients(
    params: &mut ParamStore,
    opt: &mut Adam,
    grads: &[Gradients],
    clip_norm: Option<f64>,
) -> Result<f64> {
    let mut total = Gradients::empty(params.len());
    for g in grads {
        total.add(g);
    }
    if !grads.is_empty() {
        total.scale(1.0 / grads.len() as f64);
    }
    params.zero_grads();
    params.accumulate(&total);
    let norm = match clip_norm {
        Some(max) => params.clip_grad_norm(max),
        None => params.grad_norm(),
    };
    opt.step(params);
    Ok(norm)
}
