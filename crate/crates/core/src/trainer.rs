//! The training loop: per iteration and per prompt, generate `n` rollouts
//! from a frozen snapshot, score them, keep `m` by the down-sampling rule,
//! normalize advantages over the kept subset, then take one ascent step on
//! the clipped surrogate averaged over prompts.
//!
//! Simulated time advances by `prompts_per_iter · iteration_time(n, m, L)`
//! per iteration, where `L` is the mean rollout length of that iteration:
//! each prompt's group is one generation batch followed by one update.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmodel::{iteration_time, CostModelParams};
use crate::curve::{CurvePoint, TrainingCurve};
use crate::error::{invalid, PodsError, Result};
use crate::objective::{normalize_advantages, pods_objective_with_gradient, ClipConfig, RolloutBatch, ScoredRollout};
use crate::optim::{clip_global_norm, Optimizer, OptimizerConfig};
use crate::policy_env::{evaluate, logprob_sequence, reward, sample_rollout, BigramPolicy, Prompt, Rollout, Vocab};
use crate::selection::{DownSampleRule, RewardVector, RuleKind};

pub const CONFIG_VERSION: u32 = 1;

/// Which rollouts of a group enter the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    /// Vanilla group-relative update on all `n` rollouts (requires `m = n`).
    Grpo,
    /// Down-sample to `m` with the given rule.
    Pods(RuleKind),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Grpo => f.pad("grpo"),
            Strategy::Pods(kind) => f.pad(kind.as_str()),
        }
    }
}

impl FromStr for Strategy {
    type Err = PodsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grpo" => Ok(Strategy::Grpo),
            other => other.parse().map(Strategy::Pods).map_err(|_| {
                PodsError::InvalidArgument(format!(
                    "unknown rule `{other}` (expected grpo, max_variance, max_reward or random)"
                ))
            }),
        }
    }
}

impl TryFrom<String> for Strategy {
    type Error = PodsError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

fn default_version() -> u32 {
    CONFIG_VERSION
}
fn default_rule() -> Strategy {
    Strategy::Pods(RuleKind::MaxVariance)
}
fn default_learning_rate() -> f64 {
    0.05
}
fn default_grad_clip() -> Option<f64> {
    Some(1.0)
}
fn default_prompts_per_iter() -> usize {
    4
}
fn default_iterations() -> usize {
    200
}
fn default_eval_every() -> usize {
    1
}
fn default_content_tokens() -> usize {
    crate::policy_env::DEFAULT_CONTENT_TOKENS
}
fn default_t_max() -> usize {
    crate::policy_env::DEFAULT_T_MAX
}

/// Everything that determines a training run. `n` and `m` are required in
/// config documents; every other key has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_rule")]
    pub rule: Strategy,
    #[serde(default)]
    pub epsilon: ClipConfig,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Global-norm gradient clipping; `None` disables it.
    #[serde(default = "default_grad_clip")]
    pub grad_clip: Option<f64>,
    #[serde(default = "default_prompts_per_iter")]
    pub prompts_per_iter: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_content_tokens")]
    pub content_tokens: usize,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    #[serde(default)]
    pub cost: CostModelParams,
}

impl TrainConfig {
    /// Defaults for everything but the group and update sizes.
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            version: CONFIG_VERSION,
            name: None,
            n,
            m,
            rule: default_rule(),
            epsilon: ClipConfig::default(),
            learning_rate: default_learning_rate(),
            optimizer: OptimizerConfig::default(),
            grad_clip: default_grad_clip(),
            prompts_per_iter: default_prompts_per_iter(),
            iterations: default_iterations(),
            eval_every: default_eval_every(),
            seed: 0,
            content_tokens: default_content_tokens(),
            t_max: default_t_max(),
            cost: CostModelParams::default(),
        }
    }

    /// Vanilla GRPO on `n` rollouts.
    pub fn grpo(n: usize) -> Self {
        Self { rule: Strategy::Grpo, ..Self::new(n, n) }
    }

    /// Down-sample `n` rollouts to `m` with `rule`.
    pub fn pods(n: usize, m: usize, rule: RuleKind) -> Self {
        Self { rule: Strategy::Pods(rule), ..Self::new(n, m) }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn display_name(&self) -> String {
        match &self.name {
            Some(name) => name.clone(),
            None => format!("{}_n{}_m{}", self.rule, self.n, self.m),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |key: &str, message: String| {
            Err(PodsError::Config { key: key.to_string(), message })
        };
        if self.version != CONFIG_VERSION {
            return cfg("version", format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.n == 0 {
            return cfg("n", "must be at least 1".into());
        }
        if self.m == 0 || self.m > self.n {
            return cfg("m", format!("must satisfy 1 <= m <= n = {}, got {}", self.n, self.m));
        }
        if self.rule == Strategy::Grpo && self.m != self.n {
            return cfg("m", format!("rule grpo trains on every rollout, so m must equal n = {}", self.n));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return cfg("learning_rate", format!("must be finite and non-negative, got {}", self.learning_rate));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return cfg("grad_clip", format!("must be positive, got {c}"));
            }
        }
        if self.prompts_per_iter == 0 {
            return cfg("prompts_per_iter", "must be at least 1".into());
        }
        if self.iterations == 0 {
            return cfg("iterations", "must be at least 1".into());
        }
        if self.eval_every == 0 {
            return cfg("eval_every", "must be at least 1".into());
        }
        if self.content_tokens == 0 {
            return cfg("content_tokens", "must be at least 1".into());
        }
        if self.t_max == 0 {
            return cfg("t_max", "must be at least 1".into());
        }
        self.optimizer
            .validate()
            .or_else(|e| cfg("optimizer", e.to_string()))?;
        self.cost.validate().or_else(|e| cfg("cost", e.to_string()))?;
        Ok(())
    }
}

/// Independent RNG streams derived from the master seed, one per purpose and
/// coordinate, so generation order does not affect results.
mod streams {
    pub const PROMPT: u64 = 1;
    pub const ROLLOUT: u64 = 2;
    pub const SELECT: u64 = 3;

    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn seed(master: u64, coords: &[u64]) -> u64 {
        coords.iter().fold(splitmix(master), |h, &c| splitmix(h ^ splitmix(c)))
    }
}

/// What one iteration did.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationReport {
    pub iter: usize,
    pub sim_seconds: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub mean_len: f64,
    pub mean_reward: f64,
    pub accuracy: Option<f64>,
}

/// Stateful runner for one [`TrainConfig`].
pub struct Trainer {
    config: TrainConfig,
    vocab: Vocab,
    policy: BigramPolicy,
    optimizer: Optimizer,
    eval_prompts: Vec<Prompt>,
    iteration: usize,
    sim_seconds: f64,
    curve: TrainingCurve,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let vocab = Vocab::new(config.content_tokens)?;
        let policy = BigramPolicy::uniform(vocab);
        let optimizer = config.optimizer.build(policy.params().len());
        Ok(Self {
            vocab,
            eval_prompts: Prompt::all(vocab),
            optimizer,
            policy,
            config,
            iteration: 0,
            sim_seconds: 0.0,
            curve: TrainingCurve::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn policy(&self) -> &BigramPolicy {
        &self.policy
    }

    pub fn curve(&self) -> &TrainingCurve {
        &self.curve
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    fn prompts_for(&self, iter: usize) -> Vec<Prompt> {
        (0..self.config.prompts_per_iter)
            .map(|j| {
                let seed = streams::seed(self.config.seed, &[streams::PROMPT, iter as u64, j as u64]);
                let target = ChaCha8Rng::seed_from_u64(seed).gen_range(0..self.vocab.content_tokens());
                Prompt::new(self.vocab, target).expect("target drawn from the vocabulary")
            })
            .collect()
    }

    /// Runs one iteration of generate, select, and update.
    pub fn step(&mut self) -> Result<IterationReport> {
        let cfg = &self.config;
        let iter = self.iteration;
        let (n, m) = (cfg.n, cfg.m);
        let prompts = self.prompts_for(iter);

        // Generation phase: read-only snapshot, every rollout on its own stream.
        let frozen = self.policy.clone();
        let groups: Vec<Vec<Rollout>> = prompts
            .par_iter()
            .enumerate()
            .map(|(j, &prompt)| {
                (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let seed = streams::seed(cfg.seed, &[streams::ROLLOUT, iter as u64, j as u64, i as u64]);
                        sample_rollout(&frozen, prompt, cfg.t_max, seed)
                    })
                    .collect()
            })
            .collect();

        // Update phase.
        let scale = 1.0 / prompts.len() as f64;
        let mut grad = vec![0.0; self.policy.params().len()];
        let mut objective = 0.0;
        let mut total_len = 0usize;
        let mut total_reward = 0.0;
        for (j, (prompt, group)) in prompts.iter().zip(&groups).enumerate() {
            let rewards: Vec<f64> = group.iter().map(|r| reward(&r.tokens, *prompt, self.vocab)).collect();
            total_len += group.iter().map(Rollout::len).sum::<usize>();
            total_reward += rewards.iter().sum::<f64>();
            let rewards = RewardVector::new(rewards)?;

            let subset: Vec<usize> = match cfg.rule {
                Strategy::Grpo => (0..n).collect(),
                Strategy::Pods(kind) => {
                    let seed = streams::seed(cfg.seed, &[streams::SELECT, iter as u64, j as u64]);
                    DownSampleRule { kind, seed: Some(seed) }.apply(&rewards, m)?.indices
                }
            };
            let advantages = normalize_advantages(&rewards, &subset)?;

            let mut selected = Vec::with_capacity(subset.len());
            for &i in &subset {
                let r = &group[i];
                selected.push(ScoredRollout {
                    tokens: r.tokens.clone(),
                    frozen_logprobs: r.logprobs.clone(),
                    current_logprobs: logprob_sequence(&self.policy, &r.tokens, *prompt)?,
                });
            }
            let batch = RolloutBatch::new(selected)
                .map_err(|e| PodsError::Invariant(format!("iteration {iter}, prompt {j}: {e}")))?;
            let positions: Vec<usize> = (0..batch.len()).collect();
            let (value, token_grads) = pods_objective_with_gradient(&batch, &positions, &advantages, cfg.epsilon)?;
            objective += scale * value;
            for (r, weights) in batch.rollouts.iter().zip(&token_grads) {
                self.policy.add_logprob_gradient(&r.tokens, prompt.target(), weights, scale, &mut grad);
            }
        }

        let grad_norm = match cfg.grad_clip {
            Some(max) => clip_global_norm(&mut grad, max),
            None => grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        };
        self.optimizer.ascend(self.policy.params_mut(), &grad, cfg.learning_rate);
        // a logit adds two parameters, so each must stay below half the range
        if self.policy.params().iter().any(|p| !(p.abs() <= f64::MAX / 2.0)) {
            return Err(PodsError::Invariant(format!("policy parameters diverged after iteration {iter}")));
        }

        let rollouts = (n * prompts.len()) as f64;
        let mean_len = total_len as f64 / rollouts;
        let mean_reward = total_reward / rollouts;
        self.sim_seconds += prompts.len() as f64 * iteration_time(n, m, mean_len, &cfg.cost)?;
        self.iteration += 1;

        let accuracy = if self.iteration % cfg.eval_every == 0 || self.iteration == cfg.iterations {
            let acc = evaluate(&self.policy, &self.eval_prompts, cfg.t_max);
            self.curve.push(CurvePoint {
                sim_seconds: self.sim_seconds,
                accuracy: acc,
                mean_len,
                mean_reward,
                iter: self.iteration,
            })?;
            Some(acc)
        } else {
            None
        };

        Ok(IterationReport {
            iter: self.iteration,
            sim_seconds: self.sim_seconds,
            objective,
            grad_norm,
            mean_len,
            mean_reward,
            accuracy,
        })
    }

    pub fn run(mut self) -> Result<TrainingCurve> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.curve)
    }
}

pub fn train(config: &TrainConfig) -> Result<TrainingCurve> {
    Trainer::new(config.clone())?.run()
}

/// Runs every config on the same prompts and evaluation schedule. With
/// `base_seed` set, it replaces each config's seed, so all runs share their
/// random streams.
pub fn run_comparison(configs: &[TrainConfig], base_seed: Option<u64>) -> Result<Vec<TrainingCurve>> {
    if configs.len() < 2 {
        return invalid(format!("a comparison needs at least 2 configs, got {}", configs.len()));
    }
    let schedule = (configs[0].iterations, configs[0].eval_every);
    if let Some(c) = configs.iter().find(|c| (c.iterations, c.eval_every) != schedule) {
        return invalid(format!(
            "config `{}` uses a different evaluation schedule ({} iterations every {}) than the baseline ({} every {})",
            c.display_name(),
            c.iterations,
            c.eval_every,
            schedule.0,
            schedule.1
        ));
    }
    configs
        .par_iter()
        .map(|c| {
            let mut c = c.clone();
            if let Some(seed) = base_seed {
                c.seed = seed;
            }
            train(&c)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub n: usize,
    pub m: usize,
    pub curve: TrainingCurve,
}

/// Trains every `(n, m)` in the cross product of the grids.
pub fn sweep(base: &TrainConfig, n_values: &[usize], m_values: &[usize]) -> Result<Vec<SweepCell>> {
    if n_values.is_empty() || m_values.is_empty() {
        return invalid("sweep grids must be nonempty");
    }
    let cells: Vec<(usize, usize)> = n_values
        .iter()
        .flat_map(|&n| m_values.iter().map(move |&m| (n, m)))
        .collect();
    cells
        .par_iter()
        .map(|&(n, m)| {
            let config = TrainConfig { n, m, ..base.clone() };
            Ok(SweepCell { n, m, curve: train(&config)? })
        })
        .collect()
}
