//! Train one configuration and print its learning curve against simulated
//! time.
//!
//!     cargo run --release --example train_pods -- [n] [m] [rule] [seed]

use pods::{RuleKind, TrainConfig, Trainer};

fn main() -> pods::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n = args.first().map_or(64, |s| s.parse().expect("n"));
    let m = args.get(1).map_or(16, |s| s.parse().expect("m"));
    let rule: RuleKind = args.get(2).map_or(Ok(RuleKind::MaxVariance), |s| s.parse())?;
    let seed = args.get(3).map_or(0, |s| s.parse().expect("seed"));

    let config = TrainConfig { iterations: 120, ..TrainConfig::pods(n, m, rule).with_seed(seed) };
    println!("training {} for {} iterations", config.display_name(), config.iterations);
    let mut trainer = Trainer::new(config)?;
    println!("{:>5} {:>10} {:>8} {:>8} {:>8} {:>9}", "iter", "sim_time", "acc", "reward", "length", "objective");
    while !trainer.is_done() {
        let r = trainer.step()?;
        if r.iter % 10 == 0 {
            println!(
                "{:>5} {:>10.0} {:>8.3} {:>8.3} {:>8.2} {:>9.2e}",
                r.iter,
                r.sim_seconds,
                r.accuracy.unwrap_or(f64::NAN),
                r.mean_reward,
                r.mean_len,
                r.objective
            );
        }
    }
    let curve = trainer.curve();
    println!("peak accuracy {:.3}, final {:.3}", curve.peak_accuracy().unwrap(), curve.final_accuracy().unwrap());
    Ok(())
}
