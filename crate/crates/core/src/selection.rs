//! Down-sampling rules: given the rewards of a group of `n` rollouts, pick
//! the `m` rollouts that enter the policy update.
//!
//! Three rules are provided:
//!
//! - [`max_variance_select`]: the size-`m` subset with the largest population
//!   reward variance. The optimum is always `m - k` lowest plus `k` highest
//!   rewards for some `k`, so after one sort a sweep over `k` with prefix sums
//!   of `r` and `r²` finds it in `O(n log n)`.
//! - [`max_reward_select`]: the `m` largest rewards.
//! - [`random_select`]: `m` indices uniformly without replacement.
//!
//! [`brute_force_select`] enumerates every subset and is kept as an oracle.
//!
//! All indices are 0-based positions in the caller's rollout array, and every
//! returned index list is sorted ascending.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PodsError, Result};

/// Largest group size [`brute_force_select`] will enumerate.
pub const MAX_BRUTE_FORCE_N: usize = 20;

/// Candidates in the max-variance sweep must beat the incumbent by more than
/// this many ulps (scaled by the largest squared reward) to replace it, so
/// that splits tied in exact arithmetic resolve to the smallest `k`.
const TIE_ULPS: f64 = 8.0;

/// Per-rollout rewards of one prompt's group. Never empty, always finite.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct RewardVector(Vec<f64>);

impl RewardVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("reward vector must contain at least one reward");
        }
        if let Some(i) = values.iter().position(|r| !r.is_finite()) {
            return invalid(format!("reward {i} is not finite ({})", values[i]));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for RewardVector {
    type Error = PodsError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl<'de> Deserialize<'de> for RewardVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        Self::new(values).map_err(serde::de::Error::custom)
    }
}

/// The subset a rule retained, with the population variance of its rewards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub m: usize,
    #[serde(rename = "variance")]
    pub achieved_variance: f64,
}

impl SelectionResult {
    fn from_indices(rewards: &RewardVector, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        let achieved_variance = subset_variance(rewards, &indices)?;
        Ok(Self {
            m: indices.len(),
            indices,
            achieved_variance,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    MaxVariance,
    MaxReward,
    Random,
}

impl RuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::MaxVariance => "max_variance",
            RuleKind::MaxReward => "max_reward",
            RuleKind::Random => "random",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for RuleKind {
    type Err = PodsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_variance" => Ok(RuleKind::MaxVariance),
            "max_reward" => Ok(RuleKind::MaxReward),
            "random" => Ok(RuleKind::Random),
            other => invalid(format!(
                "unknown down-sampling rule `{other}` (expected max_variance, max_reward or random)"
            )),
        }
    }
}

/// A down-sampling rule `D(o, r; m)`. Only the random rule reads `seed`,
/// and it refuses to run without one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownSampleRule {
    pub kind: RuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DownSampleRule {
    pub fn max_variance() -> Self {
        Self { kind: RuleKind::MaxVariance, seed: None }
    }

    pub fn max_reward() -> Self {
        Self { kind: RuleKind::MaxReward, seed: None }
    }

    pub fn random(seed: u64) -> Self {
        Self { kind: RuleKind::Random, seed: Some(seed) }
    }

    pub fn apply(&self, rewards: &RewardVector, m: usize) -> Result<SelectionResult> {
        match self.kind {
            RuleKind::MaxVariance => max_variance_select(rewards, m),
            RuleKind::MaxReward => max_reward_select(rewards, m),
            RuleKind::Random => match self.seed {
                Some(seed) => random_select(rewards, m, seed),
                None => invalid("random down-sampling requires a seed"),
            },
        }
    }
}

fn check_update_size(n: usize, m: usize) -> Result<()> {
    if m == 0 || m > n {
        return invalid(format!("update size m={m} must satisfy 1 <= m <= n={n}"));
    }
    Ok(())
}

/// Population variance (mean of squares minus squared mean) of the selected
/// rewards. Rounding can push the difference a hair below zero; it is
/// clamped.
pub fn subset_variance(rewards: &RewardVector, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return invalid("index set must be nonempty");
    }
    let values = rewards.as_slice();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &i in indices {
        let Some(&r) = values.get(i) else {
            return invalid(format!("index {i} out of range for {} rewards", values.len()));
        };
        sum += r;
        sum_sq += r * r;
    }
    let m = indices.len() as f64;
    let mean = sum / m;
    Ok((sum_sq / m - mean * mean).max(0.0))
}

/// Prefix sums of `r` and `r²`; element `k` covers the first `k` entries.
pub fn prefix_moments(sorted_rewards: &[f64]) -> (Vec<f64>, Vec<f64>) {
    debug_assert!(
        sorted_rewards.windows(2).all(|w| w[0] <= w[1]),
        "prefix_moments expects ascending input"
    );
    prefix_moments_of(sorted_rewards.iter().copied())
}

fn prefix_moments_of(values: impl ExactSizeIterator<Item = f64>) -> (Vec<f64>, Vec<f64>) {
    let mut sums = Vec::with_capacity(values.len() + 1);
    let mut squares = Vec::with_capacity(values.len() + 1);
    let (mut s, mut q) = (0.0, 0.0);
    sums.push(s);
    squares.push(q);
    for r in values {
        s += r;
        q += r * r;
        sums.push(s);
        squares.push(q);
    }
    (sums, squares)
}

/// Sort key for `(value, index)`: the `f64` total order in the high 64 bits,
/// the index in the low 64, so integer order is value order with ties broken
/// by index.
fn packed_key(value: f64, index: usize) -> u128 {
    let bits = value.to_bits();
    let ordered = bits ^ ((((bits as i64) >> 63) as u64) >> 1) ^ (1 << 63);
    ((ordered as u128) << 64) | index as u128
}

fn key_index(key: u128) -> usize {
    key as u64 as usize
}

fn key_value(key: u128) -> f64 {
    let ordered = ((key >> 64) as u64) ^ (1 << 63);
    f64::from_bits(ordered ^ ((((ordered as i64) >> 63) as u64) >> 1))
}

/// The `m` lowest and `m` highest `(value, index)` keys, each block sorted
/// ascending. When the blocks would overlap the whole vector is sorted and
/// both views point into it.
fn extreme_keys(values: &[f64], m: usize) -> Vec<u128> {
    let n = values.len();
    let mut keys: Vec<u128> = values.iter().enumerate().map(|(i, &v)| packed_key(v, i)).collect();
    if 2 * m < n {
        // partition around rank m, then around rank n - m in the upper part
        keys.select_nth_unstable(m);
        keys[m..].select_nth_unstable(n - 2 * m);
        keys[..m].sort_unstable();
        keys[n - m..].sort_unstable();
    } else {
        keys.sort_unstable();
    }
    keys
}

/// The size-`m` subset of maximal population variance.
///
/// Rewards are argsorted (ties by index), then each split "`m - k` lowest
/// plus `k` highest" for `k = 0..=m` is scored in constant time from prefix
/// moments of the low end and suffix moments of the high end. Only the `m`
/// extremes at each end are ever sorted. `k = 0` is the initial candidate and
/// a later split only replaces the incumbent when strictly larger, so ties
/// keep the smallest `k`.
pub fn max_variance_select(rewards: &RewardVector, m: usize) -> Result<SelectionResult> {
    let values = rewards.as_slice();
    check_update_size(values.len(), m)?;

    let n = values.len();
    let keys = extreme_keys(values, m);
    let value_at = |pos: usize| key_value(keys[pos]);
    // low[j]: moments of the j lowest; high[k]: moments of the k highest
    let (low_s, low_q) = prefix_moments_of((0..m).map(value_at));
    let (high_s, high_q) = prefix_moments_of((n - m..n).rev().map(value_at));

    let mf = m as f64;
    let split_variance = |k: usize| {
        let s = low_s[m - k] + high_s[k];
        let q = low_q[m - k] + high_q[k];
        let mean = s / mf;
        q / mf - mean * mean
    };

    let scale = value_at(0).powi(2).max(value_at(n - 1).powi(2));
    let tol = TIE_ULPS * f64::EPSILON * scale;

    let mut best_k = 0;
    let mut best = split_variance(0);
    for k in 1..=m {
        let v = split_variance(k);
        if v > best + tol {
            best = v;
            best_k = k;
        }
    }

    // ascending output via a membership mask rather than a second sort
    let mut chosen = vec![false; n];
    for pos in (0..m - best_k).chain(n - best_k..n) {
        chosen[key_index(keys[pos])] = true;
    }
    let indices = chosen.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i).collect();
    SelectionResult::from_indices(rewards, indices)
}

/// The `m` largest rewards; equal rewards prefer the smaller index.
pub fn max_reward_select(rewards: &RewardVector, m: usize) -> Result<SelectionResult> {
    check_update_size(rewards.len(), m)?;
    let mut pairs: Vec<(f64, usize)> = rewards.as_slice().iter().copied().zip(0..).collect();
    pairs.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let indices = pairs[..m].iter().map(|p| p.1).collect();
    SelectionResult::from_indices(rewards, indices)
}

/// `m` distinct indices from `0..n`, uniform over all size-`m` subsets and
/// fixed by `seed`. Returned ascending.
pub fn random_indices(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    check_update_size(n, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = rand::seq::index::sample(&mut rng, n, m).into_vec();
    indices.sort_unstable();
    Ok(indices)
}

pub fn random_select(rewards: &RewardVector, m: usize, seed: u64) -> Result<SelectionResult> {
    let indices = random_indices(rewards.len(), m, seed)?;
    SelectionResult::from_indices(rewards, indices)
}

/// Exhaustive search over all `C(n, m)` subsets. Returns the first maximum
/// in lexicographic order. Limited to `n <= MAX_BRUTE_FORCE_N`.
pub fn brute_force_select(rewards: &RewardVector, m: usize) -> Result<SelectionResult> {
    let n = rewards.len();
    check_update_size(n, m)?;
    if n > MAX_BRUTE_FORCE_N {
        return invalid(format!(
            "brute force enumeration is limited to n <= {MAX_BRUTE_FORCE_N}, got n={n}"
        ));
    }

    let mut combo: Vec<usize> = (0..m).collect();
    let mut best = combo.clone();
    let mut best_var = subset_variance(rewards, &combo)?;
    loop {
        // advance to the next combination in lexicographic order
        let Some(pos) = (0..m).rev().find(|&i| combo[i] < n - m + i) else {
            break;
        };
        combo[pos] += 1;
        for i in pos + 1..m {
            combo[i] = combo[i - 1] + 1;
        }
        let v = subset_variance(rewards, &combo)?;
        if v > best_var {
            best_var = v;
            best.copy_from_slice(&combo);
        }
    }
    SelectionResult::from_indices(rewards, best)
}
