//! The `pods` command-line driver.
//!
//! Every command reads an optional config document (TOML, or JSON when the
//! file ends in `.json`), applies `--set key=value` overrides on top, writes
//! its data files into `--out`, and records a `manifest.json` next to them.
//! A manifest can be fed back through `--config` to reproduce a run.

use std::fs;
use std::hint::black_box;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::costmodel::{cost_table, speedup, write_cost_csv, CostModelParams};
use crate::curve::TrainingCurve;
use crate::error::{invalid, PodsError, Result};
use crate::selection::{max_variance_select, RewardVector};
use crate::trainer::{run_comparison, sweep, TrainConfig, Trainer};

pub const MANIFEST_FILE: &str = "manifest.json";
/// Speedups compare against this fraction of the baseline's peak accuracy.
pub const TARGET_FRACTION: f64 = 0.99;
/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "POD_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pods", version, about = "Rollout down-sampling experiments on a synthetic verifiable-reward task")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration and write its curve and final policy.
    Train(RunArgs),
    /// Train several configurations on shared seeds and tabulate speedups
    /// against the first one.
    Compare(RunArgs),
    /// Train the cross product of an n grid and an m grid.
    Sweep(SweepArgs),
    /// Time max-variance selection across input sizes.
    BenchSelect(BenchArgs),
    /// Tabulate the cost model over batch sizes.
    SimulateCost(CostArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Directory for output files.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Master seed; overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a config entry, e.g. `--set learning_rate=0.02` or
    /// `--set cost.t_update_step=8`. Values parse as JSON, else as strings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunArgs {
    /// Config document. `compare` takes it repeatedly, baseline first.
    #[arg(long = "config", value_name = "PATH")]
    pub configs: Vec<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Comma-separated group sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64, 128, 256])]
    pub n_grid: Vec<usize>,
    /// Comma-separated update sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [16usize])]
    pub m_grid: Vec<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    /// Comma-separated input sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [1_000usize, 10_000, 100_000, 1_000_000])]
    pub sizes: Vec<usize>,
    /// Timed repetitions per size; the median is reported.
    #[arg(long, default_value_t = 7)]
    pub reps: usize,
    /// Subset size as a fraction of n.
    #[arg(long, default_value_t = 0.25)]
    pub m_frac: f64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CostArgs {
    /// Config document; its `cost` table supplies the parameters.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Comma-separated batch sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8, 16, 21, 32, 64, 128, 256, 512, 1024])]
    pub batches: Vec<usize>,
    /// Mean tokens per rollout.
    #[arg(long, default_value_t = 16.0)]
    pub avg_tokens: f64,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Everything needed to rerun a command: the resolved config and the
/// arguments, plus where the outputs went.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub args: Value,
    pub outputs: Vec<String>,
}

pub fn exit_code(err: &PodsError) -> i32 {
    match err {
        PodsError::Config { .. } | PodsError::InvalidArgument(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parses the arguments, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match configure_threads().and_then(|()| run(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&t| t > 0).ok_or_else(|| PodsError::Config {
        key: THREADS_ENV.into(),
        message: format!("expected a positive integer, got `{raw}`"),
    })?;
    // A second call in the same process finds the pool built; keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::BenchSelect(a) => cmd_bench_select(&a),
        Command::SimulateCost(a) => cmd_simulate_cost(&a),
    }
}

// ---------------------------------------------------------------------------
// config documents

/// Reads a TOML or JSON document. A manifest resolves to the config it
/// recorded.
pub fn load_document(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| PodsError::Config {
        key: path.display().to_string(),
        message: format!("cannot read config: {e}"),
    })?;
    let parse_err = |message: String| PodsError::Config { key: path.display().to_string(), message };
    let doc: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
    } else {
        toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
    };
    Ok(match doc {
        Value::Object(mut map) if map.contains_key("command") && map.contains_key("config") => {
            map.remove("config").expect("checked above")
        }
        other => other,
    })
}

/// Applies one `key=value` override; dotted keys descend into tables.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        return Err(PodsError::Config {
            key: assignment.into(),
            message: "override must look like key=value".into(),
        });
    };
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(PodsError::Config { key: key.into(), message: "empty key segment".into() });
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = doc;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        if !node.is_object() {
            return Err(PodsError::Config {
                key: key.into(),
                message: format!("cannot descend into non-table at `{part}`"),
            });
        }
        let map = node.as_object_mut().expect("checked above");
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("split yields at least one segment")
}

/// Deserializes a resolved document, naming the offending key on failure.
pub fn from_document<T: DeserializeOwned>(doc: Value) -> Result<T> {
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        let key = match missing_field(&inner) {
            Some(field) if path == "." => field.to_string(),
            Some(field) => format!("{path}.{field}"),
            None => path,
        };
        PodsError::Config { key, message: inner }
    })
}

fn missing_field(message: &str) -> Option<&str> {
    message.strip_prefix("missing field `")?.split('`').next()
}

/// File (or empty) document, then overrides, then `--seed`, then validation.
pub fn resolve_config(path: Option<&Path>, common: &CommonArgs) -> Result<TrainConfig> {
    let doc = match path {
        Some(p) => load_document(p)?,
        None => Value::Object(Map::new()),
    };
    resolve_document(doc, common)
}

fn resolve_document(mut doc: Value, common: &CommonArgs) -> Result<TrainConfig> {
    if !doc.is_object() {
        return Err(PodsError::Config { key: ".".into(), message: "config must be a table".into() });
    }
    for o in &common.overrides {
        apply_override(&mut doc, o)?;
    }
    if let Some(seed) = common.seed {
        apply_override(&mut doc, &format!("seed={seed}"))?;
    }
    let config: TrainConfig = from_document(doc)?;
    config.validate()?;
    Ok(config)
}

// ---------------------------------------------------------------------------
// output plumbing

struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        Ok(())
    }

    fn finish<A: Serialize>(mut self, command: &str, seed: Option<u64>, config: Value, args: &A) -> Result<()> {
        let manifest = ExperimentManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config,
            args: serde_json::to_value(args)?,
            outputs: self.written.clone(),
        };
        self.json(MANIFEST_FILE, &manifest)?;
        eprintln!("wrote {} files to {}", self.written.len(), self.dir.display());
        Ok(())
    }
}

/// Curves of several runs in one long-format CSV.
fn write_joined_curves<W: Write>(named: &[(String, &TrainingCurve)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["name", "sim_seconds", "accuracy", "mean_len", "mean_reward", "iter"])?;
    for (name, curve) in named {
        for p in &curve.points {
            w.write_record([
                name.clone(),
                p.sim_seconds.to_string(),
                p.accuracy.to_string(),
                p.mean_len.to_string(),
                p.mean_reward.to_string(),
                p.iter.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// commands

pub fn cmd_train(args: &RunArgs) -> Result<()> {
    if args.configs.len() > 1 {
        return invalid("train takes at most one --config");
    }
    let config = resolve_config(args.configs.first().map(PathBuf::as_path), &args.common)?;
    let mut trainer = Trainer::new(config.clone())?;
    while !trainer.is_done() {
        let report = trainer.step()?;
        if let Some(acc) = report.accuracy {
            if report.iter % 25 == 0 || trainer.is_done() {
                eprintln!(
                    "iter {:>4}  t={:>10.1}  acc={acc:.3}  reward={:.3}  len={:.2}",
                    report.iter, report.sim_seconds, report.mean_reward, report.mean_len
                );
            }
        }
    }
    let mut out = OutDir::create(&args.common.out)?;
    trainer.curve().save_csv(&out.path("curve.csv"))?;
    out.json("curve.json", trainer.curve())?;
    trainer.policy().save_json(&out.path("policy.json"))?;
    out.json("config.json", &config)?;
    out.finish("train", Some(config.seed), serde_json::to_value(&config)?, args)
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub name: String,
    pub peak_acc: f64,
    /// Time to reach the baseline's target accuracy; empty when never reached.
    pub t_to_target: Option<f64>,
    pub ratio: f64,
}

/// The default comparison: vanilla GRPO on 16 rollouts against max-variance
/// down-sampling from 64 to 16.
pub fn default_comparison() -> Vec<Value> {
    let doc = |c: TrainConfig| serde_json::to_value(c).expect("configs serialize");
    vec![
        doc(TrainConfig::grpo(16)),
        doc(TrainConfig::pods(64, 16, crate::RuleKind::MaxVariance)),
    ]
}

pub fn speedup_table(configs: &[TrainConfig], curves: &[TrainingCurve]) -> Result<Vec<SpeedupRow>> {
    let baseline = curves.first().ok_or_else(|| PodsError::InvalidArgument("no curves".into()))?;
    configs
        .iter()
        .zip(curves)
        .map(|(c, curve)| {
            let s = speedup(baseline, curve, TARGET_FRACTION)?;
            Ok(SpeedupRow {
                name: c.display_name(),
                peak_acc: curve.peak_accuracy().unwrap_or(0.0),
                t_to_target: s.candidate_time,
                ratio: s.ratio,
            })
        })
        .collect()
}

/// Columns: `name, peak_acc, t_to_target, ratio`; an unreachable target
/// leaves `t_to_target` empty and `ratio` as `inf`.
pub fn write_speedup_csv<W: Write>(rows: &[SpeedupRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_compare(args: &RunArgs) -> Result<()> {
    let docs = if args.configs.is_empty() {
        default_comparison()
    } else {
        args.configs.iter().map(|p| load_document(p)).collect::<Result<Vec<_>>>()?
    };
    // A compare manifest records the whole list.
    let docs = match docs.as_slice() {
        [Value::Array(list)] => list.clone(),
        _ => docs,
    };
    let configs = docs
        .into_iter()
        .map(|d| resolve_document(d, &args.common))
        .collect::<Result<Vec<_>>>()?;
    let curves = run_comparison(&configs, None)?;
    let rows = speedup_table(&configs, &curves)?;

    let mut out = OutDir::create(&args.common.out)?;
    let named: Vec<(String, &TrainingCurve)> =
        configs.iter().zip(&curves).map(|(c, k)| (c.display_name(), k)).collect();
    write_joined_curves(&named, fs::File::create(out.path("curves.csv"))?)?;
    write_speedup_csv(&rows, fs::File::create(out.path("speedup.csv"))?)?;
    for row in &rows {
        let t = row.t_to_target.map_or("never".to_string(), |t| format!("{t:.1}"));
        println!("{:<28} peak={:.3}  t_to_target={t:>10}  ratio={:.3}", row.name, row.peak_acc, row.ratio);
    }
    let seed = configs[0].seed;
    out.finish("compare", Some(seed), serde_json::to_value(&configs)?, args)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let base = match &args.config {
        Some(p) => load_document(p)?,
        None => {
            // n and m come from the grids; seed the document so it resolves.
            let mut doc = Value::Object(Map::new());
            doc["n"] = Value::from(args.n_grid.first().copied().unwrap_or(1));
            doc["m"] = Value::from(1);
            doc
        }
    };
    let base = resolve_document(base, &args.common)?;
    let cells = sweep(&base, &args.n_grid, &args.m_grid)?;

    let mut out = OutDir::create(&args.common.out)?;
    let named: Vec<(String, &TrainingCurve)> =
        cells.iter().map(|c| (format!("n{}_m{}", c.n, c.m), &c.curve)).collect();
    write_joined_curves(&named, fs::File::create(out.path("sweep.csv"))?)?;
    for cell in &cells {
        println!(
            "n={:>4} m={:>4}  peak={:.3}  final={:.3}",
            cell.n,
            cell.m,
            cell.curve.peak_accuracy().unwrap_or(0.0),
            cell.curve.final_accuracy().unwrap_or(0.0)
        );
    }
    out.finish("sweep", Some(base.seed), serde_json::to_value(&base)?, args)
}

// ---------------------------------------------------------------------------
// selection benchmark

const MIN_BENCH_ELEMENTS: usize = 1_000_000;

/// Median wall-clock of max-variance selection at one input size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub median_ns: u128,
}

/// Allowed growth of the median from the smallest to the largest size:
/// `1.25 · (n ratio) · (log ratio)`, which is 2500 for `10³ → 10⁶`.
pub fn nlogn_bound(n_small: usize, n_large: usize) -> f64 {
    let (a, b) = (n_small as f64, n_large as f64);
    1.25 * (b / a) * (b.ln() / a.ln())
}

/// Times `max_variance_select` on uniform random rewards with
/// `m = max(1, m_frac · n)`, reporting the median of at least `reps` runs per
/// size. Small sizes get more runs (up to `MIN_BENCH_ELEMENTS / n`) so their
/// microsecond timings are not at the mercy of a single hiccup.
pub fn bench_select(sizes: &[usize], reps: usize, m_frac: f64, seed: u64) -> Result<Vec<BenchRow>> {
    if sizes.is_empty() || reps == 0 {
        return invalid("bench needs at least one size and one repetition");
    }
    if !(m_frac > 0.0 && m_frac <= 1.0) {
        return invalid(format!("m_frac must lie in (0, 1], got {m_frac}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sizes
        .iter()
        .map(|&n| {
            if n == 0 {
                return invalid("bench sizes must be positive");
            }
            let rewards = RewardVector::new((0..n).map(|_| rng.gen::<f64>()).collect())?;
            let m = ((m_frac * n as f64) as usize).clamp(1, n);
            // one untimed warm-up run
            black_box(max_variance_select(&rewards, m)?);
            let runs = reps.max((MIN_BENCH_ELEMENTS / n).min(1000));
            let mut times: Vec<u128> = (0..runs)
                .map(|_| {
                    let start = Instant::now();
                    let r = max_variance_select(black_box(&rewards), m);
                    let elapsed = start.elapsed().as_nanos();
                    black_box(r).map(|_| elapsed)
                })
                .collect::<Result<_>>()?;
            times.sort_unstable();
            Ok(BenchRow { n, median_ns: times[times.len() / 2].max(1) })
        })
        .collect()
}

/// Whether the largest size's median stays within [`nlogn_bound`] of the
/// smallest's. Returns `(ratio, bound)`.
pub fn bench_check(rows: &[BenchRow]) -> Option<(f64, f64)> {
    let small = rows.iter().min_by_key(|r| r.n)?;
    let large = rows.iter().max_by_key(|r| r.n)?;
    if large.n == small.n || small.n < 2 {
        return None;
    }
    Some((large.median_ns as f64 / small.median_ns as f64, nlogn_bound(small.n, large.n)))
}

pub fn cmd_bench_select(args: &BenchArgs) -> Result<()> {
    let rows = bench_select(&args.sizes, args.reps, args.m_frac, args.seed)?;
    let mut out = OutDir::create(&args.out)?;
    let mut w = csv::Writer::from_path(out.path("bench.csv"))?;
    for row in &rows {
        w.serialize(row)?;
        println!("n={:>9}  median={:>12} ns", row.n, row.median_ns);
    }
    w.flush()?;
    if let Some((ratio, bound)) = bench_check(&rows) {
        let verdict = if ratio <= bound { "PASS" } else { "FAIL" };
        println!("{verdict} n log n growth: time ratio {ratio:.1} <= bound {bound:.1}");
    }
    out.finish("bench-select", Some(args.seed), Value::Null, args)
}

// ---------------------------------------------------------------------------
// cost table

pub fn cmd_simulate_cost(args: &CostArgs) -> Result<()> {
    let mut doc = match &args.config {
        Some(p) => load_document(p)?,
        None => Value::Object(Map::new()),
    };
    for o in &args.common.overrides {
        apply_override(&mut doc, o)?;
    }
    let cost_doc = doc.get("cost").cloned().unwrap_or_else(|| Value::Object(Map::new()));
    let params: CostModelParams = from_document(cost_doc).map_err(|e| match e {
        PodsError::Config { key, message } => PodsError::Config { key: format!("cost.{key}"), message },
        other => other,
    })?;
    params.validate().map_err(|e| PodsError::Config { key: "cost".into(), message: e.to_string() })?;
    let rows = cost_table(&args.batches, args.avg_tokens, &params)?;

    let mut out = OutDir::create(&args.common.out)?;
    write_cost_csv(&rows, fs::File::create(out.path("cost.csv"))?)?;
    write_cost_csv(&rows, std::io::stdout().lock())?;
    out.finish("simulate-cost", args.common.seed, serde_json::to_value(params)?, args)
}
