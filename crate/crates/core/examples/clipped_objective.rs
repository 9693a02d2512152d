//! Subset-normalized advantages, the clipped surrogate, and its exact
//! gradient checked against central differences.
//!
//!     cargo run --example clipped_objective

use pods::objective::{
    clipped_term, normalize_advantages, pods_objective, pods_objective_with_gradient, RolloutBatch, ScoredRollout,
};
use pods::selection::max_variance_select;
use pods::{ClipConfig, RewardVector};

fn main() -> pods::Result<()> {
    let cfg = ClipConfig::default();
    println!("clip epsilon {}", cfg.epsilon());
    for (ratio, a) in [(1.0, 2.0), (1.5, 2.0), (0.5, -1.0), (1.1, -1.0)] {
        println!("  ratio {ratio:>4}, advantage {a:>4} -> term {:>6.3}", clipped_term(ratio, a, cfg)?);
    }

    // Six rollouts; keep four by max variance and standardize over those.
    let rewards = RewardVector::new(vec![3.0, 0.5, 1.0, 2.75, 0.0, 1.5])?;
    let subset = max_variance_select(&rewards, 4)?.indices;
    let advantages = normalize_advantages(&rewards, &subset)?;
    println!("\nsubset {subset:?}, advantages {:?}", advantages.as_slice());

    let make = |len: usize, shift: f64| ScoredRollout {
        tokens: vec![6; len],
        frozen_logprobs: (0..len).map(|t| -1.0 - 0.1 * t as f64).collect(),
        current_logprobs: (0..len).map(|t| -1.0 - 0.1 * t as f64 + shift * (t as f64 - 1.0)).collect(),
    };
    let batch = RolloutBatch::new(subset.iter().map(|&i| make(3 + i, 0.05 * i as f64)).collect())?;
    let positions: Vec<usize> = (0..batch.len()).collect();

    let anchored = RolloutBatch::new(
        batch
            .rollouts
            .iter()
            .map(|r| ScoredRollout { current_logprobs: r.frozen_logprobs.clone(), ..r.clone() })
            .collect(),
    )?;
    println!("objective at the frozen policy: {:.2e}", pods_objective(&anchored, &positions, &advantages, cfg)?);

    let (value, grad) = pods_objective_with_gradient(&batch, &positions, &advantages, cfg)?;
    println!("objective after a small policy change: {value:.6}");

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, row) in grad.iter().enumerate() {
        for (t, g) in row.iter().enumerate() {
            let eval = |d: f64| {
                let mut b = batch.clone();
                b.rollouts[i].current_logprobs[t] += d;
                pods_objective(&b, &positions, &advantages, cfg)
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            worst = worst.max((g - fd).abs());
        }
    }
    println!("largest |analytic - finite difference| over all tokens: {worst:.2e}");
    Ok(())
}
