//! The simulated cost of an iteration: batching makes generation cheap per
//! token, while updates beyond the memory limit need accumulation steps.
//!
//!     cargo run --example cost_model

use pods::costmodel::{cost_table, iteration_time, speedup, write_cost_csv};
use pods::{CostModelParams, TrainingCurve};

fn main() -> pods::Result<()> {
    let p = CostModelParams::default();
    let tokens = 200.0;
    write_cost_csv(&cost_table(&[1, 8, 32, 64, 128, 512, 1024], tokens, &p)?, std::io::stdout())?;

    // Three ways to use 512 rollouts per prompt of a given length:
    let ga = iteration_time(512, 512, tokens, &p)?; // generate 512, update on all with accumulation
    let pods = iteration_time(512, 128, tokens, &p)?; // generate 512, update on 128 chosen
    let small = iteration_time(32, 32, tokens, &p)?; // only what fits in one update
    println!("\nper-iteration time: accumulate-all {ga:.1}, down-sample to 128 {pods:.1}, generate 32 {small:.1}");

    // Speedup: how much sooner a candidate reaches 99% of the baseline's peak.
    let baseline = TrainingCurve::from_pairs(&[(100.0, 0.4), (200.0, 0.7), (300.0, 0.8)])?;
    let candidate = TrainingCurve::from_pairs(&[(80.0, 0.6), (160.0, 0.85), (240.0, 0.9)])?;
    let s = speedup(&baseline, &candidate, 0.99)?;
    println!(
        "target {:.3}: baseline at {}, candidate at {:?}, speedup {:.2}",
        s.target, s.baseline_time, s.candidate_time, s.ratio
    );
    Ok(())
}
