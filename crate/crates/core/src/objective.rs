//! Subset-normalized advantages and the clipped surrogate objective.
//!
//! The objective is a surrogate to be maximized:
//!
//! ```text
//! L(θ, S) = 1/m Σ_{i∈S} 1/|o_i| Σ_t min(ρ_it · a_i, clip(ρ_it, 1-ε, 1+ε) · a_i)
//! ρ_it    = exp(log π_θ(o_it) - log π_fixed(o_it))
//! ```
//!
//! With `S` the full group this is the plain group-relative objective.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::selection::RewardVector;

/// Clipping half-width `ε`, strictly inside `(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ClipConfig {
    epsilon: f64,
}

impl ClipConfig {
    pub const DEFAULT_EPSILON: f64 = 0.2;

    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return invalid(format!("clip epsilon must lie in (0, 1), got {epsilon}"));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self { epsilon: Self::DEFAULT_EPSILON }
    }
}

impl TryFrom<f64> for ClipConfig {
    type Error = crate::error::PodsError;

    fn try_from(epsilon: f64) -> Result<Self> {
        Self::new(epsilon)
    }
}

impl From<ClipConfig> for f64 {
    fn from(c: ClipConfig) -> f64 {
        c.epsilon
    }
}

/// Advantages aligned position-by-position with a subset's index list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageVector(Vec<f64>);

impl AdvantageVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0.0)
    }
}

/// One rollout's tokens with per-token log-probabilities under the frozen
/// (generating) policy and the current policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredRollout {
    pub tokens: Vec<usize>,
    pub frozen_logprobs: Vec<f64>,
    pub current_logprobs: Vec<f64>,
}

impl ScoredRollout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn validate(&self, i: usize) -> Result<()> {
        let len = self.tokens.len();
        if len == 0 {
            return invalid(format!("rollout {i} is empty"));
        }
        if self.frozen_logprobs.len() != len || self.current_logprobs.len() != len {
            return invalid(format!(
                "rollout {i}: {len} tokens but {} frozen / {} current log-probs",
                self.frozen_logprobs.len(),
                self.current_logprobs.len()
            ));
        }
        let bad = |lp: &f64| !lp.is_finite() || *lp > 0.0;
        if self.frozen_logprobs.iter().chain(&self.current_logprobs).any(bad) {
            return invalid(format!("rollout {i}: log-probs must be finite and <= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub rollouts: Vec<ScoredRollout>,
}

impl RolloutBatch {
    pub fn new(rollouts: Vec<ScoredRollout>) -> Result<Self> {
        for (i, r) in rollouts.iter().enumerate() {
            r.validate(i)?;
        }
        Ok(Self { rollouts })
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }
}

/// `(r_i - μ_S) / σ_S` over the subset with population `σ_S`. A subset whose
/// rewards are all equal gets all-zero advantages.
pub fn normalize_advantages(rewards: &RewardVector, subset: &[usize]) -> Result<AdvantageVector> {
    if subset.is_empty() {
        return invalid("advantage subset must be nonempty");
    }
    let values = rewards.as_slice();
    let mut selected = Vec::with_capacity(subset.len());
    for &i in subset {
        match values.get(i) {
            Some(&r) => selected.push(r),
            None => return invalid(format!("index {i} out of range for {} rewards", values.len())),
        }
    }

    let first = selected[0];
    if selected.iter().all(|&r| r == first) {
        return Ok(AdvantageVector(vec![0.0; selected.len()]));
    }

    let m = selected.len() as f64;
    let mean = selected.iter().sum::<f64>() / m;
    let var = selected.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / m;
    let std = var.sqrt();
    Ok(AdvantageVector(selected.iter().map(|r| (r - mean) / std).collect()))
}

/// `min(ρ·a, clip(ρ, 1-ε, 1+ε)·a)`.
pub fn clipped_term(ratio: f64, advantage: f64, config: ClipConfig) -> Result<f64> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return invalid(format!("probability ratio must be positive and finite, got {ratio}"));
    }
    Ok(clip_branches(ratio, advantage, config.epsilon).0)
}

/// Term value and whether the unclipped branch is the active one (ties go to
/// the unclipped branch).
#[inline]
fn clip_branches(ratio: f64, advantage: f64, eps: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

fn check_alignment(batch: &RolloutBatch, subset: &[usize], advantages: &AdvantageVector) -> Result<()> {
    if subset.is_empty() {
        return invalid("objective subset must be nonempty");
    }
    if subset.len() != advantages.len() {
        return invalid(format!(
            "advantage vector has {} entries for a subset of {}",
            advantages.len(),
            subset.len()
        ));
    }
    for &i in subset {
        let Some(r) = batch.rollouts.get(i) else {
            return invalid(format!("index {i} out of range for batch of {}", batch.len()));
        };
        r.validate(i)?;
    }
    Ok(())
}

/// The surrogate and, optionally, its gradient. The gradient has one row per
/// rollout of the batch (all zeros for rollouts outside the subset).
fn evaluate(
    batch: &RolloutBatch,
    subset: &[usize],
    advantages: &AdvantageVector,
    config: ClipConfig,
    want_grad: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_alignment(batch, subset, advantages)?;
    let eps = config.epsilon;
    let m = subset.len() as f64;

    let mut grad: Vec<Vec<f64>> = if want_grad {
        batch.rollouts.iter().map(|r| vec![0.0; r.len()]).collect()
    } else {
        Vec::new()
    };

    let mut total = 0.0;
    for (&i, &a) in subset.iter().zip(advantages.as_slice()) {
        let rollout = &batch.rollouts[i];
        let len = rollout.len() as f64;
        let mut acc = 0.0;
        for (t, (cur, old)) in rollout.current_logprobs.iter().zip(&rollout.frozen_logprobs).enumerate() {
            let ratio = (cur - old).exp();
            let (term, unclipped) = clip_branches(ratio, a, eps);
            acc += term;
            if want_grad && unclipped {
                grad[i][t] += ratio * a / (m * len);
            }
        }
        total += acc / len;
    }
    Ok((total / m, grad))
}

/// `L(θ, S)` for a subset and advantages aligned with it.
pub fn pods_objective(
    batch: &RolloutBatch,
    subset: &[usize],
    advantages: &AdvantageVector,
    config: ClipConfig,
) -> Result<f64> {
    evaluate(batch, subset, advantages, config, false).map(|(l, _)| l)
}

/// `∂L/∂log π_θ(o_it)` for every token of every rollout in the batch.
pub fn pods_objective_gradient(
    batch: &RolloutBatch,
    subset: &[usize],
    advantages: &AdvantageVector,
    config: ClipConfig,
) -> Result<Vec<Vec<f64>>> {
    evaluate(batch, subset, advantages, config, true).map(|(_, g)| g)
}

pub fn pods_objective_with_gradient(
    batch: &RolloutBatch,
    subset: &[usize],
    advantages: &AdvantageVector,
    config: ClipConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    evaluate(batch, subset, advantages, config, true)
}

/// The group-relative objective over all `n` rollouts.
pub fn grpo_objective(batch: &RolloutBatch, rewards: &RewardVector, config: ClipConfig) -> Result<f64> {
    if rewards.len() != batch.len() {
        return invalid(format!("{} rewards for a batch of {}", rewards.len(), batch.len()));
    }
    let all: Vec<usize> = (0..batch.len()).collect();
    let advantages = normalize_advantages(rewards, &all)?;
    pods_objective(batch, &all, &advantages, config)
}
