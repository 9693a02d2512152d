//! Acceptance criteria, one verdict line per criterion.
//!
//! Everything runs inside a single test so the timing benchmark is not
//! disturbed by sibling tests. Lines are written straight to stderr so they
//! show up in the log whether or not the test passes.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use pods::cli::{bench_check, bench_select, nlogn_bound, write_speedup_csv, SpeedupRow};
use pods::costmodel::{per_token_time, speedup, update_time, CostModelParams};
use pods::objective::{normalize_advantages, pods_objective, pods_objective_gradient, RolloutBatch, ScoredRollout};
use pods::selection::{brute_force_select, max_variance_select, subset_variance};
use pods::{ClipConfig, DownSampleRule, RewardVector, RuleKind, TrainConfig, Trainer, TrainingCurve};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances and sizes, fixed up front.
const ORACLE_MAX_N: usize = 12;
const ORACLE_VECTORS_PER_N: usize = 1000;
const ORACLE_TOL: f64 = 1e-12;
const BINARY_VECTORS: usize = 10_000;
const BINARY_MAX_N: usize = 64;
const BENCH_SMALL: usize = 1_000;
const BENCH_LARGE: usize = 1_000_000;
const BENCH_REPS: usize = 7;
const BENCH_M_FRAC: f64 = 0.25;
const BENCH_MAX_RATIO: f64 = 2500.0;
const FD_STEP: f64 = 1e-6;
const FD_REL_TOL: f64 = 1e-5;
const FD_INSTANCES: usize = 100;
const KINK_MARGIN: f64 = 1e-3;
const ANCHOR_BATCHES: usize = 100;
const ANCHOR_TOL: f64 = 1e-9;
const IDENTITY_ITERS: usize = 50;
const E2E_SEEDS: u64 = 10;
const E2E_FRACTION: f64 = 0.99;
const SIGN_TEST_ALPHA: f64 = 0.05;

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(v: &Verdict) {
    let line = format!(
        "[acceptance] criterion {:>2} {:<28} {}  {}\n",
        v.id,
        v.name,
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn uniform_rewards(rng: &mut ChaCha8Rng, n: usize) -> RewardVector {
    RewardVector::new((0..n).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

/// Positions of `indices` when all rewards are ordered by (value, index).
fn sorted_positions(rewards: &[f64], indices: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rewards.len()).collect();
    order.sort_by(|&a, &b| rewards[a].total_cmp(&rewards[b]).then(a.cmp(&b)));
    let mut rank = vec![0; rewards.len()];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos;
    }
    let mut positions: Vec<usize> = indices.iter().map(|&i| rank[i]).collect();
    positions.sort_unstable();
    positions
}

fn is_prefix_suffix(positions: &[usize], n: usize) -> bool {
    let m = positions.len();
    (0..=m).any(|k| positions.iter().enumerate().all(|(j, &p)| if j < m - k { p == j } else { p == n - m + j }))
}

/// Criteria 1 and 3 share their instances.
fn oracle_and_shape() -> (Verdict, Verdict) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    let (mut checked, mut worst, mut mismatches, mut not_split) = (0usize, 0.0f64, 0usize, 0usize);
    for n in 1..=ORACLE_MAX_N {
        for _ in 0..ORACLE_VECTORS_PER_N {
            let r = uniform_rewards(&mut rng, n);
            for m in 1..=n {
                let fast = max_variance_select(&r, m).unwrap();
                let oracle = brute_force_select(&r, m).unwrap();
                let gap = (fast.achieved_variance - oracle.achieved_variance).abs();
                worst = worst.max(gap);
                if gap > ORACLE_TOL || fast.indices.len() != m {
                    mismatches += 1;
                }
                if !is_prefix_suffix(&sorted_positions(r.as_slice(), &fast.indices), n) {
                    not_split += 1;
                }
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        Verdict {
            id: 1,
            name: "oracle equivalence",
            pass: mismatches == 0 && secs < 60.0,
            detail: format!(
                "{checked} (vector, m) cases, n<=12, {mismatches} mismatches, max |gap| {worst:.1e} (tol {ORACLE_TOL:.0e}), {secs:.1}s"
            ),
        },
        Verdict {
            id: 3,
            name: "lower/upper split shape",
            pass: not_split == 0,
            detail: format!("{checked} selections, {not_split} not a sorted prefix+suffix"),
        },
    )
}

fn binary_law() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xB1A);
    let mut bad = 0;
    for _ in 0..BINARY_VECTORS {
        let n = rng.gen_range(2..=BINARY_MAX_N);
        let p: f64 = rng.gen();
        let r: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < p { 1.0 } else { 0.0 }).collect();
        let m = 2 * rng.gen_range(1..=n / 2);
        let ones = r.iter().filter(|&&x| x == 1.0).count();
        let zeros = n - ones;
        // half of each class, unless one class is too small: then all of it
        let expected_ones = if ones < m / 2 {
            ones
        } else if zeros < m / 2 {
            m - zeros
        } else {
            m / 2
        };
        let sel = max_variance_select(&RewardVector::new(r.clone()).unwrap(), m).unwrap();
        let got_ones = sel.indices.iter().filter(|&&i| r[i] == 1.0).count();
        if got_ones != expected_ones || sel.indices.len() != m {
            bad += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict {
        id: 2,
        name: "binary reward law",
        pass: bad == 0 && secs < 10.0,
        detail: format!("{BINARY_VECTORS} binary vectors, n<=64, even m, {bad} class-count mismatches, {secs:.2}s"),
    }
}

fn benchmark() -> Verdict {
    let start = Instant::now();
    let rows = bench_select(&[BENCH_SMALL, BENCH_LARGE], BENCH_REPS, BENCH_M_FRAC, 7).unwrap();
    let (ratio, bound) = bench_check(&rows).unwrap();
    assert_eq!(bound, nlogn_bound(BENCH_SMALL, BENCH_LARGE));
    let secs = start.elapsed().as_secs_f64();
    Verdict {
        id: 4,
        name: "n log n benchmark",
        pass: ratio <= BENCH_MAX_RATIO && secs < 120.0,
        detail: format!(
            "median {} ns at n=1e3, {} ns at n=1e6, ratio {ratio:.0} (bound {BENCH_MAX_RATIO}), {secs:.1}s",
            rows[0].median_ns, rows[1].median_ns
        ),
    }
}

/// A random batch whose current log-probs sit `delta` away from the frozen
/// ones; the subset comes from `rule`.
fn random_instance(
    rng: &mut ChaCha8Rng,
    rule: DownSampleRule,
    delta_scale: f64,
    eps: f64,
) -> (RolloutBatch, Vec<usize>, pods::objective::AdvantageVector) {
    loop {
        let n = rng.gen_range(2..=8);
        let m = rng.gen_range(2..=n);
        let rewards = RewardVector::new((0..n).map(|_| rng.gen_range(0..4) as f64 * 0.5).collect()).unwrap();
        let mut rollouts = Vec::with_capacity(n);
        let mut near_kink = false;
        for _ in 0..n {
            let len = rng.gen_range(1..=8);
            let frozen: Vec<f64> = (0..len).map(|_| rng.gen_range(-6.0..-0.5)).collect();
            let current: Vec<f64> = frozen.iter().map(|f| f + rng.gen_range(-delta_scale..=delta_scale)).collect();
            for (c, f) in current.iter().zip(&frozen) {
                let rho = (c - f).exp();
                near_kink |= (rho - (1.0 - eps)).abs() <= KINK_MARGIN || (rho - (1.0 + eps)).abs() <= KINK_MARGIN;
            }
            rollouts.push(ScoredRollout { tokens: vec![6; len], frozen_logprobs: frozen, current_logprobs: current });
        }
        if near_kink {
            continue;
        }
        let subset = rule.apply(&rewards, m).unwrap().indices;
        let advantages = normalize_advantages(&rewards, &subset).unwrap();
        return (RolloutBatch::new(rollouts).unwrap(), subset, advantages);
    }
}

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    let cfg = ClipConfig::default();
    let (mut worst, mut failures, mut clipped_tokens, mut tokens) = (0.0f64, 0, 0usize, 0usize);
    for _ in 0..FD_INSTANCES {
        let (batch, subset, adv) = random_instance(&mut rng, DownSampleRule::max_variance(), 0.4, cfg.epsilon());
        let analytic = pods_objective_gradient(&batch, &subset, &adv, cfg).unwrap();
        let (mut diff2, mut norm2) = (0.0, 0.0);
        for i in 0..batch.len() {
            for t in 0..batch.rollouts[i].len() {
                let eval = |h: f64| {
                    let mut b = batch.clone();
                    b.rollouts[i].current_logprobs[t] += h;
                    pods_objective(&b, &subset, &adv, cfg).unwrap()
                };
                let fd = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
                let g = analytic[i][t];
                diff2 += (g - fd).powi(2);
                norm2 += fd.powi(2).max(g.powi(2));
                tokens += 1;
                if subset.contains(&i) && g == 0.0 {
                    clipped_tokens += 1;
                }
            }
        }
        let rel = if norm2 > 0.0 { (diff2 / norm2).sqrt() } else { diff2.sqrt() };
        worst = worst.max(rel);
        if rel > FD_REL_TOL {
            failures += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict {
        id: 5,
        name: "gradient check",
        pass: failures == 0 && secs < 30.0,
        detail: format!(
            "{FD_INSTANCES} instances, {tokens} tokens ({clipped_tokens} on the clipped branch), worst relative error {worst:.1e} (tol {FD_REL_TOL:.0e}), {secs:.2}s"
        ),
    }
}

fn zero_at_anchor() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA4C);
    let cfg = ClipConfig::default();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for rule in [DownSampleRule::max_variance(), DownSampleRule::max_reward(), DownSampleRule::random(17)] {
        for _ in 0..ANCHOR_BATCHES {
            let (mut batch, subset, adv) = random_instance(&mut rng, rule, 0.0, cfg.epsilon());
            for r in &mut batch.rollouts {
                r.current_logprobs = r.frozen_logprobs.clone();
            }
            worst = worst.max(pods_objective(&batch, &subset, &adv, cfg).unwrap().abs());
            cases += 1;
        }
    }
    Verdict {
        id: 6,
        name: "zero at anchor",
        pass: worst <= ANCHOR_TOL,
        detail: format!("{cases} batches over 3 rules, max |L| {worst:.1e} (tol {ANCHOR_TOL:.0e})"),
    }
}

fn identity_reduction() -> Verdict {
    let seed = 2024;
    let mk = |c: TrainConfig| TrainConfig { iterations: IDENTITY_ITERS, ..c.with_seed(seed) };
    let mut grpo = Trainer::new(mk(TrainConfig::grpo(16))).unwrap();
    let mut pods = Trainer::new(mk(TrainConfig::pods(16, 16, RuleKind::MaxVariance))).unwrap();
    let mut first_divergence = None;
    for it in 1..=IDENTITY_ITERS {
        let a = grpo.step().unwrap();
        let b = pods.step().unwrap();
        let same_params = grpo.policy().params().iter().zip(pods.policy().params()).all(|(x, y)| x.to_bits() == y.to_bits());
        if !same_params || a != b {
            first_divergence.get_or_insert(it);
        }
    }
    let curves_equal = grpo.curve() == pods.curve();
    Verdict {
        id: 7,
        name: "identity reduction",
        pass: first_divergence.is_none() && curves_equal,
        detail: match first_divergence {
            None => format!("{IDENTITY_ITERS} iterations, parameters and reports bitwise equal"),
            Some(it) => format!("diverged at iteration {it}"),
        },
    }
}

fn cost_calibration() -> Verdict {
    let p = CostModelParams::default();
    let ratio = per_token_time(512, &p).unwrap() / per_token_time(1, &p).unwrap();
    let exact = ratio == 1.0 / 21.0;
    let jumps: Vec<usize> = (2..=256)
        .filter(|&b| update_time(b, &p).unwrap() > update_time(b - 1, &p).unwrap())
        .map(|b| b - 1)
        .collect();
    let expected: Vec<usize> = (1..8).map(|k| 32 * k).collect();
    Verdict {
        id: 8,
        name: "cost model calibration",
        pass: exact && jumps == expected,
        detail: format!("per_token(512)/per_token(1) = {ratio:?} (1/21 exact: {exact}); update_time steps up after {jumps:?}"),
    }
}

fn speedup_metric() -> Verdict {
    let base = TrainingCurve::from_pairs(&[(10.0, 0.2), (20.0, 0.6), (30.0, 0.5)]).unwrap();
    let halved = TrainingCurve::from_pairs(&[(5.0, 0.2), (10.0, 0.6), (15.0, 0.5)]).unwrap();
    // baseline target 0.594 is first met at t=20; the candidate's value holds
    // flat between checkpoints, so 0.59 at t=10 does not count and 0.7 at t=25 does
    let stepped = TrainingCurve::from_pairs(&[(10.0, 0.59), (25.0, 0.7), (40.0, 0.1)]).unwrap();
    let never = TrainingCurve::from_pairs(&[(1.0, 0.1)]).unwrap();
    let same = speedup(&base, &base, E2E_FRACTION).unwrap().ratio;
    let half = speedup(&base, &halved, E2E_FRACTION).unwrap().ratio;
    let step = speedup(&base, &stepped, E2E_FRACTION).unwrap().ratio;
    let unreachable = speedup(&base, &never, E2E_FRACTION).unwrap();
    let pass = same == 1.0 && half == 2.0 && step == 20.0 / 25.0 && !unreachable.reachable();
    Verdict {
        id: 9,
        name: "speedup ratio metric",
        pass,
        detail: format!("identical {same}, halved {half}, stepped {step} (expect 0.8), unreachable -> sentinel {}", unreachable.ratio),
    }
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
fn sign_test_p(wins: u64, n: u64) -> f64 {
    let choose = |n: u64, k: u64| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    (wins..=n).map(|k| choose(n, k)).sum::<f64>() / 2f64.powi(n as i32)
}

fn end_to_end() -> Verdict {
    let start = Instant::now();
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance_end_to_end");
    fs::create_dir_all(&out).unwrap();
    let configs = [
        TrainConfig::grpo(16),
        TrainConfig::pods(64, 16, RuleKind::MaxVariance),
        TrainConfig::pods(64, 16, RuleKind::Random),
    ];
    let (mut ratios, mut final_maxvar, mut final_random) = (Vec::new(), Vec::new(), Vec::new());
    let mut rows = Vec::new();
    for seed in 0..E2E_SEEDS {
        let curves = pods::trainer::run_comparison(&configs, Some(seed)).unwrap();
        for (c, curve) in configs.iter().zip(&curves) {
            curve.save_csv(&out.join(format!("seed{seed}_{}.csv", c.display_name()))).unwrap();
        }
        let s = speedup(&curves[0], &curves[1], E2E_FRACTION).unwrap();
        // a candidate that never reaches the target is a loss, not a win
        let effective = if s.reachable() { s.ratio } else { 0.0 };
        ratios.push(effective);
        rows.push(SpeedupRow {
            name: format!("seed{seed}"),
            peak_acc: curves[1].peak_accuracy().unwrap(),
            t_to_target: s.candidate_time,
            ratio: s.ratio,
        });
        final_maxvar.push(curves[1].final_accuracy().unwrap());
        final_random.push(curves[2].final_accuracy().unwrap());
    }
    write_speedup_csv(&rows, fs::File::create(out.join("speedup.csv")).unwrap()).unwrap();

    let wins = ratios.iter().filter(|&&r| r > 1.0).count() as u64;
    let p = sign_test_p(wins, E2E_SEEDS);
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mv, rd) = (mean(&final_maxvar), mean(&final_random));
    let directional = mv >= rd;
    if !directional {
        fs::write(
            out.join("DISCREPANCY.txt"),
            format!(
                "max-variance mean final accuracy {mv:.4} < random {rd:.4} across {E2E_SEEDS} seeds\n\
                 per-seed max-variance: {final_maxvar:?}\nper-seed random: {final_random:?}\n"
            ),
        )
        .unwrap();
    }
    let secs = start.elapsed().as_secs_f64();
    let ratio_list: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    Verdict {
        id: 10,
        name: "end-to-end speedup",
        pass: p < SIGN_TEST_ALPHA && mean_ratio > 1.0 && secs < 600.0,
        detail: format!(
            "ratios [{}], {wins}/{E2E_SEEDS} wins, sign test p={p:.4} (alpha {SIGN_TEST_ALPHA}), mean ratio {mean_ratio:.2}; \
             final acc max_variance {mv:.3} vs random {rd:.3} ({}); curves in {}; {secs:.0}s",
            ratio_list.join(", "),
            if directional { "ordering holds" } else { "ordering reversed, see DISCREPANCY.txt" },
            out.display()
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let mut verdicts = Vec::new();
    let (oracle, shape) = oracle_and_shape();
    verdicts.push(oracle);
    verdicts.push(binary_law());
    verdicts.push(shape);
    verdicts.push(benchmark());
    verdicts.push(gradient_check());
    verdicts.push(zero_at_anchor());
    verdicts.push(identity_reduction());
    verdicts.push(cost_calibration());
    verdicts.push(speedup_metric());
    verdicts.push(end_to_end());
    verdicts.sort_by_key(|v| v.id);
    for v in &verdicts {
        report(v);
    }
    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    assert!(failed.is_empty(), "acceptance criteria failed: {failed:?}");
}

#[test]
fn sign_test_reference_values() {
    assert!((sign_test_p(9, 10) - 11.0 / 1024.0).abs() < 1e-15);
    assert!((sign_test_p(8, 10) - 56.0 / 1024.0).abs() < 1e-15);
    assert_eq!(sign_test_p(0, 10), 1.0);
}
