use std::path::Path;

use serde::{Deserialize, Serialize};

use super::task::Vocab;
use crate::error::{invalid, Result};

pub const POLICY_FORMAT: &str = "pods-bigram-policy";
pub const POLICY_VERSION: u32 = 1;

/// Next-token policy over a [`Vocab`].
///
/// The logit for emitting `v` after `u` under a prompt whose target is content
/// token `c` is `transition[u][v] + context[c][u][v]`: a bigram table shared
/// by all prompts plus a per-prompt bigram correction. The shared table
/// carries the output format; the correction carries what differs between
/// prompts, in particular the answer emitted after `ANS_OPEN`.
///
/// Parameters live in one flat vector: the `V×V` transition table followed by
/// the `A×V×V` context table, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BigramPolicy {
    vocab: Vocab,
    params: Vec<f64>,
}

impl BigramPolicy {
    /// All-zero logits: every conditional is uniform.
    pub fn uniform(vocab: Vocab) -> Self {
        Self {
            params: vec![0.0; Self::param_count_for(vocab)],
            vocab,
        }
    }

    pub fn from_tables(vocab: Vocab, transition: Vec<f64>, context: Vec<f64>) -> Result<Self> {
        let v = vocab.size();
        if transition.len() != v * v {
            return invalid(format!("transition table needs {} entries, got {}", v * v, transition.len()));
        }
        let c = vocab.content_tokens() * v * v;
        if context.len() != c {
            return invalid(format!("context table needs {c} entries, got {}", context.len()));
        }
        let mut params = transition;
        params.extend(context);
        Self::from_params(vocab, params)
    }

    pub fn from_params(vocab: Vocab, params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::param_count_for(vocab) {
            return invalid(format!(
                "policy needs {} parameters, got {}",
                Self::param_count_for(vocab),
                params.len()
            ));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return invalid("policy logits must be finite");
        }
        Ok(Self { vocab, params })
    }

    /// A policy that emits `THINK_OPEN THINK_CLOSE ANS_OPEN <target> ANS_CLOSE
    /// EOS` for every prompt, each step winning by at least `margin` nats.
    pub fn reference_solution(vocab: Vocab, margin: f64) -> Self {
        let mut policy = Self::uniform(vocab);
        policy.transition_row_mut(Vocab::BOS)[Vocab::THINK_OPEN] = margin;
        policy.transition_row_mut(Vocab::THINK_OPEN)[Vocab::THINK_CLOSE] = margin;
        policy.transition_row_mut(Vocab::THINK_CLOSE)[Vocab::ANS_OPEN] = margin;
        for c in 0..vocab.content_tokens() {
            let tok = vocab.content_token(c);
            policy.transition_row_mut(tok)[Vocab::ANS_CLOSE] = margin;
            policy.context_row_mut(c, Vocab::ANS_OPEN)[tok] = margin;
        }
        policy.transition_row_mut(Vocab::ANS_CLOSE)[Vocab::EOS] = margin;
        policy.transition_row_mut(Vocab::EOS)[Vocab::EOS] = margin;
        policy
    }

    pub fn param_count_for(vocab: Vocab) -> usize {
        let v = vocab.size();
        v * v * (1 + vocab.content_tokens())
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn transition_row(&self, prev: usize) -> &[f64] {
        let v = self.vocab.size();
        &self.params[prev * v..(prev + 1) * v]
    }

    pub fn transition_row_mut(&mut self, prev: usize) -> &mut [f64] {
        let v = self.vocab.size();
        &mut self.params[prev * v..(prev + 1) * v]
    }

    pub fn context_row(&self, context: usize, prev: usize) -> &[f64] {
        let (_, base) = self.row_offsets(prev, context);
        &self.params[base..base + self.vocab.size()]
    }

    pub fn context_row_mut(&mut self, context: usize, prev: usize) -> &mut [f64] {
        let (_, base) = self.row_offsets(prev, context);
        let v = self.vocab.size();
        &mut self.params[base..base + v]
    }

    /// Offsets of the transition row for `prev` and the context row for
    /// `(context, prev)` inside [`params`](Self::params).
    pub(crate) fn row_offsets(&self, prev: usize, context: usize) -> (usize, usize) {
        let v = self.vocab.size();
        (prev * v, v * v + (context * v + prev) * v)
    }

    /// Writes the conditional log-distribution of the next token into `out`.
    pub fn log_softmax_into(&self, prev: usize, context: usize, out: &mut [f64]) {
        let t = self.transition_row(prev);
        let c = self.context_row(context, prev);
        let mut max = f64::NEG_INFINITY;
        for ((o, a), b) in out.iter_mut().zip(t).zip(c) {
            *o = a + b;
            max = max.max(*o);
        }
        let sum: f64 = out.iter().map(|x| (x - max).exp()).sum();
        let lse = max + sum.ln();
        for o in out.iter_mut() {
            *o -= lse;
        }
    }

    pub fn log_probs(&self, prev: usize, context: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab.size()];
        self.log_softmax_into(prev, context, &mut out);
        out
    }

    pub fn probs(&self, prev: usize, context: usize) -> Vec<f64> {
        let mut out = self.log_probs(prev, context);
        for x in &mut out {
            *x = x.exp();
        }
        out
    }

    /// Adds `scale · Σ_t weights[t] · ∇ log π(tokens[t])` into `grad`, a
    /// buffer laid out like [`params`](Self::params). For the step emitting
    /// `y` after `u`, `∂ log π(y) / ∂ logit(v) = 1[v = y] - π(v)`, and both the
    /// transition row of `u` and the context row receive that derivative.
    pub fn add_logprob_gradient(
        &self,
        tokens: &[usize],
        context: usize,
        weights: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        debug_assert_eq!(tokens.len(), weights.len());
        debug_assert_eq!(grad.len(), self.params.len());
        let v = self.vocab.size();
        let mut row = vec![0.0; v];
        let mut prev = super::Vocab::BOS;
        for (&tok, &w) in tokens.iter().zip(weights) {
            if w != 0.0 {
                self.log_softmax_into(prev, context, &mut row);
                let (t_off, c_off) = self.row_offsets(prev, context);
                let w = w * scale;
                for (k, lp) in row.iter().enumerate() {
                    let indicator = if k == tok { 1.0 } else { 0.0 };
                    let g = w * (indicator - lp.exp());
                    grad[t_off + k] += g;
                    grad[c_off + k] += g;
                }
            }
            prev = tok;
        }
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        let v = self.vocab.size();
        PolicySnapshot {
            format: POLICY_FORMAT.to_string(),
            version: POLICY_VERSION,
            content_tokens: self.vocab.content_tokens(),
            vocab_size: v,
            special_tokens: Vocab::SPECIAL_NAMES.iter().map(|s| s.to_string()).collect(),
            transition: self.params[..v * v].to_vec(),
            context: self.params[v * v..].to_vec(),
        }
    }

    pub fn from_snapshot(snapshot: PolicySnapshot) -> Result<Self> {
        if snapshot.format != POLICY_FORMAT {
            return invalid(format!("unknown policy format `{}`", snapshot.format));
        }
        if snapshot.version != POLICY_VERSION {
            return invalid(format!("unsupported policy version {}", snapshot.version));
        }
        let vocab = Vocab::new(snapshot.content_tokens)?;
        if vocab.size() != snapshot.vocab_size {
            return invalid(format!(
                "vocab_size {} does not match {} content tokens",
                snapshot.vocab_size, snapshot.content_tokens
            ));
        }
        Self::from_tables(vocab, snapshot.transition, snapshot.context)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &self.snapshot())?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::from_snapshot(serde_json::from_reader(file)?)
    }
}

/// Serialized form of a [`BigramPolicy`]: a versioned header, the vocabulary
/// layout, and the two logit tables flattened row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub format: String,
    pub version: u32,
    pub content_tokens: usize,
    pub vocab_size: usize,
    pub special_tokens: Vec<String>,
    pub transition: Vec<f64>,
    pub context: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_normalize() {
        let vocab = Vocab::default();
        let mut policy = BigramPolicy::uniform(vocab);
        for (i, p) in policy.params_mut().iter_mut().enumerate() {
            *p = ((i * 37 % 101) as f64 - 50.0) * 0.9;
        }
        for prev in 0..vocab.size() {
            for ctx in 0..vocab.content_tokens() {
                let s: f64 = policy.probs(prev, ctx).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_rows() {
        let vocab = Vocab::new(8).unwrap();
        let lp = BigramPolicy::uniform(vocab).log_probs(3, 2);
        for x in lp {
            assert!((x + (14.0f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn table_sizes_are_checked() {
        let vocab = Vocab::new(2).unwrap();
        assert!(BigramPolicy::from_tables(vocab, vec![0.0; 63], vec![0.0; 128]).is_err());
        assert!(BigramPolicy::from_tables(vocab, vec![0.0; 64], vec![0.0; 127]).is_err());
        assert!(BigramPolicy::from_tables(vocab, vec![0.0; 64], vec![0.0; 128]).is_ok());
        assert!(BigramPolicy::from_params(vocab, vec![f64::NAN; 192]).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let vocab = Vocab::new(3).unwrap();
        let policy = BigramPolicy::reference_solution(vocab, 5.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        policy.save_json(&path).unwrap();
        assert_eq!(BigramPolicy::load_json(&path).unwrap(), policy);

        let mut snap = policy.snapshot();
        assert_eq!(snap.transition.len(), 81);
        snap.version = 99;
        assert!(BigramPolicy::from_snapshot(snap).is_err());
    }
}
