//! Down-sampling a group of rewards with the three rules, and checking the
//! fast max-variance rule against exhaustive search.
//!
//!     cargo run --example max_variance_selection

use pods::selection::{brute_force_select, max_variance_select};
use pods::{DownSampleRule, RewardVector};

fn main() -> pods::Result<()> {
    let rewards = RewardVector::new(vec![2.75, 0.5, 3.0, 1.0, 0.25, 3.0, 1.0, 0.0, 2.0, 0.5, 3.0, 1.25])?;
    let m = 4;
    println!("rewards: {:?}\n", rewards.as_slice());

    for rule in [DownSampleRule::max_variance(), DownSampleRule::max_reward(), DownSampleRule::random(7)] {
        let sel = rule.apply(&rewards, m)?;
        let kept: Vec<f64> = sel.indices.iter().map(|&i| rewards.as_slice()[i]).collect();
        println!("{:<13} indices {:?}  rewards {:?}  variance {:.4}", rule.kind, sel.indices, kept, sel.achieved_variance);
    }

    // The best subset always takes some of the lowest and the rest of the
    // highest rewards; exhaustive search over all C(12, 4) subsets agrees.
    let oracle = brute_force_select(&rewards, m)?;
    println!("\nexhaustive search variance {:.4}", oracle.achieved_variance);

    // With binary rewards the rule keeps half successes and half failures.
    let binary = RewardVector::new(vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0])?;
    let sel = max_variance_select(&binary, 6)?;
    let ones = sel.indices.iter().filter(|&&i| binary.as_slice()[i] == 1.0).count();
    println!("binary group of 10, m = 6: kept {ones} successes and {} failures", 6 - ones);

    println!("\nas JSON: {}", serde_json::to_string(&sel)?);
    Ok(())
}
