//! Vanilla group-relative training on 16 rollouts against generating 64 and
//! training on 16 chosen by each down-sampling rule, over a few seeds.
//!
//!     cargo run --release --example compare_strategies -- [seeds]

use pods::cli::{speedup_table, TARGET_FRACTION};
use pods::trainer::run_comparison;
use pods::{RuleKind, TrainConfig};

fn main() -> pods::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map_or(3, |s| s.parse().expect("seeds"));
    let configs = vec![
        TrainConfig::grpo(16),
        TrainConfig::pods(64, 16, RuleKind::MaxVariance),
        TrainConfig::pods(64, 16, RuleKind::MaxReward),
        TrainConfig::pods(64, 16, RuleKind::Random),
    ];
    println!("time to reach {TARGET_FRACTION} x the baseline's peak accuracy, and the speedup over the baseline\n");
    for seed in 0..seeds {
        let curves = run_comparison(&configs, Some(seed))?;
        println!("seed {seed}");
        for row in speedup_table(&configs, &curves)? {
            let t = row.t_to_target.map_or("never".into(), |t| format!("{t:.0}"));
            println!("  {:<24} peak {:.3}  time {:>7}  speedup {:.2}", row.name, row.peak_acc, t, row.ratio);
        }
    }
    Ok(())
}
