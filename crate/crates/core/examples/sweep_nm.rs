//! Sweep the group size with the update size fixed, then the update size
//! with the group size fixed.
//!
//!     cargo run --release --example sweep_nm

use pods::trainer::sweep;
use pods::{RuleKind, TrainConfig};

fn main() -> pods::Result<()> {
    let base = TrainConfig { iterations: 80, ..TrainConfig::pods(16, 16, RuleKind::MaxVariance) };
    let report = |title: &str, cells: Vec<pods::trainer::SweepCell>| {
        println!("{title}");
        for c in cells {
            let reach = c.curve.time_to_reach(1.0).map_or("never".into(), |t| format!("{t:.0}"));
            println!(
                "  n={:>3} m={:>2}  final acc {:.3}  time to full accuracy {:>6}",
                c.n,
                c.m,
                c.curve.final_accuracy().unwrap_or(0.0),
                reach
            );
        }
    };
    report("varying n at m = 16", sweep(&base, &[16, 32, 64, 128], &[16])?);
    report("varying m at n = 64", sweep(&base, &[64], &[16, 8, 4, 2])?);
    Ok(())
}
