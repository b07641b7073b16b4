//! Simulated raters.
//!
//! A rating starts from smoothed sentence BLEU `s ∈ [0, 1]` and passes through
//! an ordered list of perturbations:
//!
//! * granular: `round(g·s)/g`, halves rounding up;
//! * variance: Gaussian noise with variance `λ·σ(u)²` where `u = 100·s` lives
//!   on the 0–100 human rating scale and `σ` is a piecewise-linear fit of
//!   rater spread; the draw is mapped back and clamped to `[0, 1]`;
//! * skew: `s^ρ` (ρ > 1 harsh, ρ < 1 generous).
//!
//! Noise for round `i` comes from a substream keyed by `(noise_seed, i)`, so
//! replaying a round reproduces its rating exactly.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::SeededRng;
use crate::error::{ensure, Result};
use crate::reward::sentence_bleu;
use crate::seq2seq::strip_eos;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Perturbation {
    Granular { g: u32 },
    Variance { lambda: f64 },
    Skew { rho: f64 },
}

impl Perturbation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Perturbation::Granular { g } => ensure!(g >= 1, "granularity g must be >= 1, got {g}"),
            Perturbation::Variance { lambda } => {
                ensure!(lambda >= 0.0 && lambda.is_finite(), "variance scale must be >= 0, got {lambda}")
            }
            Perturbation::Skew { rho } => {
                ensure!(rho > 0.0 && rho.is_finite(), "skew rho must be > 0, got {rho}")
            }
        }
        Ok(())
    }

    pub fn apply(&self, s: f64, rng: &mut SeededRng) -> Result<f64> {
        match *self {
            Perturbation::Granular { g } => pert_gran(s, g),
            Perturbation::Variance { lambda } => pert_var(s, lambda, rng),
            Perturbation::Skew { rho } => pert_skew(s, rho),
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Perturbation::Variance { lambda } if *lambda > 0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaterConfig {
    #[serde(default)]
    pub perturbations: Vec<Perturbation>,
    #[serde(default)]
    pub noise_seed: u64,
}

impl RaterConfig {
    pub fn expert() -> Self {
        Self::default()
    }

    pub fn with(perturbation: Perturbation) -> Self {
        RaterConfig {
            perturbations: vec![perturbation],
            noise_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.perturbations.iter().try_for_each(Perturbation::validate)
    }

    /// Applies the perturbation chain to a base score.
    pub fn perturb(&self, s: f64, round_index: u64) -> Result<f64> {
        let mut rng = SeededRng::new(self.noise_seed).fork_index(round_index);
        self.perturbations
            .iter()
            .try_fold(s, |acc, p| p.apply(acc, &mut rng))
    }
}

fn check_unit(s: f64) -> Result<()> {
    ensure!((0.0..=1.0).contains(&s), "score {s} outside [0, 1]");
    Ok(())
}

pub fn pert_gran(s: f64, g: u32) -> Result<f64> {
    check_unit(s)?;
    ensure!(g >= 1, "granularity g must be >= 1");
    let g = g as f64;
    // The epsilon keeps exact bin edges such as 0.1 at g = 5 on the upper side.
    let k = (g * s + 0.5 + 1e-12).floor();
    Ok(k / g)
}

/// Rater standard deviation on the 0–100 scale as a function of the mean
/// rating, floored at zero.
pub fn sigma(u: f64) -> f64 {
    let raw = if u < 50.0 { 0.64 * u - 0.02 } else { -0.67 * u + 67.0 };
    raw.max(0.0)
}

/// Gaussian draw on the 0–100 scale without clamping, divided back to the
/// unit scale. Exposed for calibration tests.
pub fn pert_var_unclamped(s: f64, lambda: f64, rng: &mut SeededRng) -> Result<f64> {
    check_unit(s)?;
    ensure!(lambda >= 0.0, "variance scale must be >= 0");
    if lambda == 0.0 {
        return Ok(s);
    }
    let u = 100.0 * s;
    let sd = lambda.sqrt() * sigma(u);
    let z: f64 = StandardNormal.sample(rng);
    Ok((u + sd * z) / 100.0)
}

pub fn pert_var(s: f64, lambda: f64, rng: &mut SeededRng) -> Result<f64> {
    if lambda == 0.0 {
        check_unit(s)?;
        return Ok(s);
    }
    Ok(pert_var_unclamped(s, lambda, rng)?.clamp(0.0, 1.0))
}

pub fn pert_skew(s: f64, rho: f64) -> Result<f64> {
    check_unit(s)?;
    ensure!(rho > 0.0, "skew rho must be > 0");
    Ok(s.powf(rho))
}

/// Rates `hyp` against `reference` for bandit round `round_index`.
pub fn rate(hyp: &[u32], reference: &[u32], config: &RaterConfig, round_index: u64) -> Result<f64> {
    let s = sentence_bleu(hyp, reference)?.score;
    config.perturb(s, round_index)
}

/// The only channel through which a bandit learner learns how good its
/// output was. `item` identifies the source sentence within the set the
/// learner was handed; `round` numbers the interaction.
pub trait RewardSource: Sync {
    fn reward(&self, item: usize, round: u64, hyp: &[u32]) -> Result<f64>;
}

/// Simulated rater holding the references privately.
#[derive(Debug, Clone)]
pub struct SimulatedRater {
    references: Vec<Vec<u32>>,
    config: RaterConfig,
}

impl SimulatedRater {
    /// `references` may carry a trailing EOS; it is ignored when scoring.
    pub fn new(references: Vec<Vec<u32>>, config: RaterConfig) -> Result<Self> {
        config.validate()?;
        let references = references
            .into_iter()
            .map(|r| strip_eos(&r).to_vec())
            .collect::<Vec<_>>();
        ensure!(references.iter().all(|r| !r.is_empty()), "empty reference given to rater");
        Ok(SimulatedRater { references, config })
    }

    pub fn config(&self) -> &RaterConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }
}

impl RewardSource for SimulatedRater {
    fn reward(&self, item: usize, round: u64, hyp: &[u32]) -> Result<f64> {
        let reference = self
            .references
            .get(item)
            .ok_or_else(|| crate::Error::contract(format!("no reference for item {item}")))?;
        rate(strip_eos(hyp), reference, &self.config, round)
    }
}

/// Returns the same reward for every output.
#[derive(Debug, Clone, Copy)]
pub struct ConstantReward(pub f64);

impl RewardSource for ConstantReward {
    fn reward(&self, _item: usize, _round: u64, _hyp: &[u32]) -> Result<f64> {
        Ok(self.0)
    }
}
