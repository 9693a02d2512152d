//! Simulated wall-clock for one training iteration.
//!
//! Generation gets cheaper per token as more rollouts share a batch, down to
//! a floor. The update phase fits `max_update_batch` rollouts per optimizer
//! step; anything larger is split into accumulation steps, each extra step
//! paying a fixed overhead. This asymmetry is what makes generating `n` and
//! training on `m < n` pay off.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::curve::TrainingCurve;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModelParams {
    /// Seconds per generated token at batch size 1.
    pub t_tok_base: f64,
    /// Batch size beyond which per-token time stops improving.
    pub sat_batch: usize,
    /// Fraction of `t_tok_base` left at saturation.
    pub floor_frac: f64,
    /// Seconds per optimizer step on a full update batch.
    pub t_update_step: f64,
    /// Rollouts per optimizer step before accumulation is required.
    pub max_update_batch: usize,
    /// Extra seconds for each accumulation step beyond the first.
    pub t_accum_overhead: f64,
}

impl Default for CostModelParams {
    fn default() -> Self {
        Self {
            t_tok_base: 1.0,
            sat_batch: 512,
            floor_frac: 1.0 / 21.0,
            t_update_step: 5.0,
            max_update_batch: 32,
            t_accum_overhead: 2.0,
        }
    }
}

impl CostModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                invalid(format!("cost.{name} must be positive, got {x}"))
            }
        };
        positive("t_tok_base", self.t_tok_base)?;
        positive("t_update_step", self.t_update_step)?;
        positive("t_accum_overhead", self.t_accum_overhead)?;
        if !(self.floor_frac > 0.0 && self.floor_frac <= 1.0) {
            return invalid(format!("cost.floor_frac must lie in (0, 1], got {}", self.floor_frac));
        }
        if self.sat_batch == 0 {
            return invalid("cost.sat_batch must be at least 1");
        }
        if self.max_update_batch == 0 {
            return invalid("cost.max_update_batch must be at least 1");
        }
        Ok(())
    }
}

/// `t_tok_base · max(floor_frac, 1 / min(batch, sat_batch))`.
pub fn per_token_time(batch: usize, p: &CostModelParams) -> Result<f64> {
    if batch == 0 {
        return invalid("batch size must be at least 1");
    }
    let effective = batch.min(p.sat_batch) as f64;
    Ok(p.t_tok_base * p.floor_frac.max(1.0 / effective))
}

/// Time to generate `n_rollouts` of `avg_tokens` tokens in one batch.
pub fn inference_time(n_rollouts: usize, avg_tokens: f64, p: &CostModelParams) -> Result<f64> {
    if n_rollouts == 0 {
        return invalid("inference needs at least one rollout");
    }
    if !(avg_tokens > 0.0 && avg_tokens.is_finite()) {
        return invalid(format!("average rollout length must be positive, got {avg_tokens}"));
    }
    Ok(n_rollouts as f64 * avg_tokens * per_token_time(n_rollouts, p)?)
}

/// Number of optimizer sub-steps needed to update on `m` rollouts.
pub fn update_steps(m: usize, p: &CostModelParams) -> Result<usize> {
    if m == 0 {
        return invalid("update needs at least one rollout");
    }
    Ok(m.div_ceil(p.max_update_batch))
}

pub fn update_time(m: usize, p: &CostModelParams) -> Result<f64> {
    let steps = update_steps(m, p)?;
    Ok(steps as f64 * p.t_update_step + (steps - 1) as f64 * p.t_accum_overhead)
}

/// Generate `n`, train on `m`.
pub fn iteration_time(n: usize, m: usize, avg_tokens: f64, p: &CostModelParams) -> Result<f64> {
    Ok(inference_time(n, avg_tokens, p)? + update_time(m, p)?)
}

/// What a speedup comparison found. `ratio` is infinite when the candidate
/// never reaches the target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub target: f64,
    pub baseline_time: f64,
    pub candidate_time: Option<f64>,
    pub ratio: f64,
}

impl Speedup {
    pub fn reachable(&self) -> bool {
        self.candidate_time.is_some()
    }
}

/// Time the baseline needs to reach `fraction` of its own peak accuracy,
/// divided by the time the candidate needs to reach the same accuracy.
pub fn speedup(baseline: &TrainingCurve, candidate: &TrainingCurve, fraction: f64) -> Result<Speedup> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return invalid(format!("target fraction must lie in (0, 1], got {fraction}"));
    }
    let Some(peak) = baseline.peak_accuracy() else {
        return invalid("baseline curve is empty");
    };
    if candidate.is_empty() {
        return invalid("candidate curve is empty");
    }
    let target = fraction * peak;
    let baseline_time = baseline
        .time_to_reach(target)
        .expect("a nonempty curve reaches a fraction of its own peak");
    let candidate_time = candidate.time_to_reach(target);
    let ratio = match candidate_time {
        Some(t) => baseline_time / t,
        None => f64::INFINITY,
    };
    Ok(Speedup { target, baseline_time, candidate_time, ratio })
}

pub fn speedup_ratio(baseline: &TrainingCurve, candidate: &TrainingCurve, fraction: f64) -> Result<f64> {
    speedup(baseline, candidate, fraction).map(|s| s.ratio)
}

/// One row of the cost table: generate `batch` rollouts and update on them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub batch: usize,
    pub per_token_time: f64,
    pub inference_time: f64,
    pub update_time: f64,
    pub iteration_time: f64,
}

pub fn cost_table(batches: &[usize], avg_tokens: f64, p: &CostModelParams) -> Result<Vec<CostRow>> {
    p.validate()?;
    batches
        .iter()
        .map(|&batch| {
            let inference = inference_time(batch, avg_tokens, p)?;
            let update = update_time(batch, p)?;
            Ok(CostRow {
                batch,
                per_token_time: per_token_time(batch, p)?,
                inference_time: inference,
                update_time: update,
                iteration_time: inference + update,
            })
        })
        .collect()
}

pub fn write_cost_csv<W: Write>(rows: &[CostRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
