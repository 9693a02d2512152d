use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::BigramPolicy;
use crate::error::{invalid, Result};

pub const DEFAULT_CONTENT_TOKENS: usize = 8;
pub const DEFAULT_T_MAX: usize = 16;

/// Token layout: six special tokens at ids `0..6`, then `A` content tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    content_tokens: usize,
}

impl Vocab {
    pub const BOS: usize = 0;
    pub const EOS: usize = 1;
    pub const THINK_OPEN: usize = 2;
    pub const THINK_CLOSE: usize = 3;
    pub const ANS_OPEN: usize = 4;
    pub const ANS_CLOSE: usize = 5;
    pub const FIRST_CONTENT: usize = 6;

    pub const SPECIAL_NAMES: [&'static str; 6] =
        ["BOS", "EOS", "THINK_OPEN", "THINK_CLOSE", "ANS_OPEN", "ANS_CLOSE"];

    pub fn new(content_tokens: usize) -> Result<Self> {
        if content_tokens == 0 {
            return invalid("vocabulary needs at least one content token");
        }
        Ok(Self { content_tokens })
    }

    pub fn content_tokens(&self) -> usize {
        self.content_tokens
    }

    pub fn size(&self) -> usize {
        Self::FIRST_CONTENT + self.content_tokens
    }

    pub fn content_token(&self, index: usize) -> usize {
        debug_assert!(index < self.content_tokens);
        Self::FIRST_CONTENT + index
    }

    pub fn is_content(&self, token: usize) -> bool {
        (Self::FIRST_CONTENT..self.size()).contains(&token)
    }

    pub fn token_name(&self, token: usize) -> String {
        match Self::SPECIAL_NAMES.get(token) {
            Some(name) => name.to_string(),
            None => format!("c{}", token - Self::FIRST_CONTENT),
        }
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self { content_tokens: DEFAULT_CONTENT_TOKENS }
    }
}

/// A prompt asks for one content token as the answer. Generation starts after
/// `BOS`, with the target as the policy's context row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    target: usize,
}

impl Prompt {
    /// `target` is a content index in `0..A`.
    pub fn new(vocab: Vocab, target: usize) -> Result<Self> {
        if target >= vocab.content_tokens() {
            return invalid(format!(
                "prompt target {target} is not one of {} content tokens",
                vocab.content_tokens()
            ));
        }
        Ok(Self { target })
    }

    /// One prompt per content token.
    pub fn all(vocab: Vocab) -> Vec<Prompt> {
        (0..vocab.content_tokens()).map(|target| Prompt { target }).collect()
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn target_token(&self) -> usize {
        Vocab::FIRST_CONTENT + self.target
    }
}

/// A generated completion: tokens (ending in `EOS` unless truncated) and the
/// log-probability the generating policy assigned to each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub tokens: Vec<usize>,
    pub logprobs: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Ancestral sampling of one rollout of at most `t_max` tokens.
pub fn sample_rollout(policy: &BigramPolicy, prompt: Prompt, t_max: usize, seed: u64) -> Rollout {
    assert!(t_max >= 1, "t_max must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = policy.vocab().size();
    let mut row = vec![0.0; v];
    let mut tokens = Vec::with_capacity(t_max);
    let mut logprobs = Vec::with_capacity(t_max);
    let mut prev = Vocab::BOS;
    while tokens.len() < t_max {
        policy.log_softmax_into(prev, prompt.target, &mut row);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut next = None;
        for (tok, lp) in row.iter().enumerate() {
            let p = lp.exp();
            acc += p;
            if p > 0.0 {
                next = Some(tok);
                if u < acc {
                    break;
                }
            }
        }
        // `next` is the last token with nonzero mass if rounding left u >= acc
        let tok = next.expect("softmax row has positive mass");
        tokens.push(tok);
        logprobs.push(row[tok]);
        if tok == Vocab::EOS {
            break;
        }
        prev = tok;
    }
    Rollout { tokens, logprobs }
}

/// Per-token log-probabilities of `tokens` under `policy` for `prompt`.
pub fn logprob_sequence(policy: &BigramPolicy, tokens: &[usize], prompt: Prompt) -> Result<Vec<f64>> {
    let v = policy.vocab().size();
    if prompt.target >= policy.vocab().content_tokens() {
        return invalid(format!("prompt target {} outside policy vocabulary", prompt.target));
    }
    let mut row = vec![0.0; v];
    let mut prev = Vocab::BOS;
    let mut out = Vec::with_capacity(tokens.len());
    for (t, &tok) in tokens.iter().enumerate() {
        if tok >= v {
            return invalid(format!("token {tok} at position {t} is outside a vocabulary of {v}"));
        }
        policy.log_softmax_into(prev, prompt.target, &mut row);
        out.push(row[tok]);
        prev = tok;
    }
    Ok(out)
}

/// The token right after the first `ANS_OPEN`, if any.
pub fn answer_token(tokens: &[usize]) -> Option<usize> {
    let pos = tokens.iter().position(|&t| t == Vocab::ANS_OPEN)?;
    tokens.get(pos + 1).copied()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub correctness: f64,
    pub format: f64,
    pub tag_count: f64,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.correctness + self.format + self.tag_count
    }
}

fn is_exact_format(tokens: &[usize], vocab: Vocab) -> bool {
    let [Vocab::THINK_OPEN, middle @ .., Vocab::ANS_CLOSE, Vocab::EOS] = tokens else {
        return false;
    };
    let [thoughts @ .., Vocab::THINK_CLOSE, Vocab::ANS_OPEN, answer] = middle else {
        return false;
    };
    vocab.is_content(*answer) && thoughts.iter().all(|&t| vocab.is_content(t))
}

/// A delimiter earns 0.25 when it occurs exactly once and after every
/// delimiter credited before it, in the order think-open, think-close,
/// answer-open, answer-close.
fn tag_count_score(tokens: &[usize]) -> f64 {
    let mut score = 0.0;
    let mut last: Option<usize> = None;
    for delim in [Vocab::THINK_OPEN, Vocab::THINK_CLOSE, Vocab::ANS_OPEN, Vocab::ANS_CLOSE] {
        let mut hits = tokens.iter().enumerate().filter(|(_, &t)| t == delim).map(|(i, _)| i);
        let (Some(pos), None) = (hits.next(), hits.next()) else {
            continue;
        };
        if last.map_or(true, |l| pos > l) {
            score += 0.25;
            last = Some(pos);
        }
    }
    score
}

pub fn reward_breakdown(tokens: &[usize], prompt: Prompt, vocab: Vocab) -> RewardBreakdown {
    RewardBreakdown {
        correctness: if answer_token(tokens) == Some(prompt.target_token()) { 1.0 } else { 0.0 },
        format: if is_exact_format(tokens, vocab) { 1.0 } else { 0.0 },
        tag_count: tag_count_score(tokens),
    }
}

/// Composite reward in `[0, 3]` on a 0.25 grid.
pub fn reward(tokens: &[usize], prompt: Prompt, vocab: Vocab) -> f64 {
    reward_breakdown(tokens, prompt, vocab).total()
}

/// Argmax decoding; ties go to the smallest token id.
pub fn greedy_decode(policy: &BigramPolicy, prompt: Prompt, t_max: usize) -> Rollout {
    let mut row = vec![0.0; policy.vocab().size()];
    let mut tokens = Vec::with_capacity(t_max);
    let mut logprobs = Vec::with_capacity(t_max);
    let mut prev = Vocab::BOS;
    while tokens.len() < t_max {
        policy.log_softmax_into(prev, prompt.target, &mut row);
        let mut best = 0;
        for (tok, &lp) in row.iter().enumerate().skip(1) {
            if lp > row[best] {
                best = tok;
            }
        }
        tokens.push(best);
        logprobs.push(row[best]);
        if best == Vocab::EOS {
            break;
        }
        prev = best;
    }
    Rollout { tokens, logprobs }
}

/// Fraction of prompts whose greedy answer token is the target.
pub fn evaluate(policy: &BigramPolicy, prompts: &[Prompt], t_max: usize) -> f64 {
    if prompts.is_empty() {
        return 0.0;
    }
    let correct = prompts
        .iter()
        .filter(|p| answer_token(&greedy_decode(policy, **p, t_max).tokens) == Some(p.target_token()))
        .count();
    correct as f64 / prompts.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    const TO: usize = Vocab::THINK_OPEN;
    const TC: usize = Vocab::THINK_CLOSE;
    const AO: usize = Vocab::ANS_OPEN;
    const AC: usize = Vocab::ANS_CLOSE;
    const EOS: usize = Vocab::EOS;

    fn setup() -> (Vocab, Prompt) {
        let vocab = Vocab::default();
        (vocab, Prompt::new(vocab, 3).unwrap())
    }

    #[test]
    fn vocab_layout() {
        let vocab = Vocab::default();
        assert_eq!(vocab.size(), 14);
        assert!(vocab.is_content(6) && vocab.is_content(13));
        assert!(!vocab.is_content(5) && !vocab.is_content(14));
        assert_eq!(vocab.token_name(AO), "ANS_OPEN");
        assert_eq!(vocab.token_name(8), "c2");
        assert!(Vocab::new(0).is_err());
        assert!(Prompt::new(vocab, 8).is_err());
    }

    #[test]
    fn perfect_rollout_scores_three() {
        let (vocab, p) = setup();
        let t = p.target_token();
        assert_eq!(reward(&[TO, TC, AO, t, AC, EOS], p, vocab), 3.0);
        assert_eq!(reward(&[TO, 6, 7, TC, AO, t, AC, EOS], p, vocab), 3.0);
    }

    #[test]
    fn bare_eos_scores_zero() {
        let (vocab, p) = setup();
        assert_eq!(reward(&[EOS], p, vocab), 0.0);
    }

    #[test]
    fn wrong_answer_keeps_format_credit() {
        let (vocab, p) = setup();
        let wrong = vocab.content_token(0);
        let b = reward_breakdown(&[TO, TC, AO, wrong, AC, EOS], p, vocab);
        assert_eq!(b, RewardBreakdown { correctness: 0.0, format: 1.0, tag_count: 1.0 });
        assert_eq!(b.total(), 2.0);
    }

    #[test]
    fn partial_structure() {
        let (vocab, p) = setup();
        let t = p.target_token();
        // correct answer without the think block
        let b = reward_breakdown(&[AO, t, AC, EOS], p, vocab);
        assert_eq!((b.correctness, b.format, b.tag_count), (1.0, 0.0, 0.5));
        // truncated before EOS
        assert_eq!(reward_breakdown(&[TO, TC, AO, t, AC], p, vocab).format, 0.0);
        // duplicated tag loses its credit
        assert_eq!(tag_count_score(&[TO, TO, TC, AO, t, AC, EOS]), 0.75);
        // out of order: ANS_CLOSE before ANS_OPEN
        assert_eq!(tag_count_score(&[TO, TC, AC, AO, EOS]), 0.75);
        // special token inside the think block breaks format
        assert_eq!(reward_breakdown(&[TO, EOS, TC, AO, t, AC, EOS], p, vocab).format, 0.0);
    }

    #[test]
    fn eos_saturated_policy_stops_immediately() {
        let vocab = Vocab::default();
        let mut policy = BigramPolicy::uniform(vocab);
        policy.transition_row_mut(Vocab::BOS)[EOS] = 40.0;
        let p = Prompt::new(vocab, 0).unwrap();
        for seed in 0..50 {
            assert_eq!(sample_rollout(&policy, p, 16, seed).tokens, vec![EOS]);
        }
    }

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let (vocab, p) = setup();
        let policy = BigramPolicy::uniform(vocab);
        let a = sample_rollout(&policy, p, 16, 11);
        assert_eq!(a, sample_rollout(&policy, p, 16, 11));
        for seed in 0..200 {
            let r = sample_rollout(&policy, p, 5, seed);
            assert!((1..=5).contains(&r.len()));
            assert!(r.logprobs.iter().all(|lp| lp.is_finite() && *lp <= 0.0));
        }
    }

    #[test]
    fn stored_logprobs_match_reevaluation_bitwise() {
        let (vocab, p) = setup();
        let mut policy = BigramPolicy::uniform(vocab);
        for (i, x) in policy.params_mut().iter_mut().enumerate() {
            *x = ((i * 7919) % 23) as f64 / 7.0 - 1.5;
        }
        for seed in 0..100 {
            let r = sample_rollout(&policy, p, 16, seed);
            let lp = logprob_sequence(&policy, &r.tokens, p).unwrap();
            assert_eq!(lp, r.logprobs);
        }
    }

    #[test]
    fn uniform_logprobs_are_minus_log_v() {
        let (vocab, p) = setup();
        let lp = logprob_sequence(&BigramPolicy::uniform(vocab), &[TO, 9, EOS], p).unwrap();
        for x in lp {
            assert!((x + 14f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn logprobs_invariant_to_row_shift() {
        let (vocab, p) = setup();
        let mut policy = BigramPolicy::reference_solution(vocab, 3.0);
        let tokens = [TO, 7, TC, AO, 9, AC, EOS];
        let before = logprob_sequence(&policy, &tokens, p).unwrap();
        for x in policy.transition_row_mut(TO) {
            *x += 12.5;
        }
        for x in policy.context_row_mut(p.target(), 9) {
            *x -= 3.0;
        }
        let after = logprob_sequence(&policy, &tokens, p).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_token_is_rejected() {
        let (vocab, p) = setup();
        assert!(logprob_sequence(&BigramPolicy::uniform(vocab), &[TO, 14], p).is_err());
    }

    #[test]
    fn reference_policy_is_perfect() {
        let vocab = Vocab::default();
        let policy = BigramPolicy::reference_solution(vocab, 10.0);
        let prompts = Prompt::all(vocab);
        assert_eq!(evaluate(&policy, &prompts, 16), 1.0);
        for p in &prompts {
            let r = greedy_decode(&policy, *p, 16);
            assert_eq!(reward(&r.tokens, *p, vocab), 3.0);
        }
    }

    #[test]
    fn greedy_ties_pick_smallest_id() {
        let vocab = Vocab::default();
        let p = Prompt::new(vocab, 0).unwrap();
        // uniform: BOS (id 0) wins every step until t_max
        let r = greedy_decode(&BigramPolicy::uniform(vocab), p, 4);
        assert_eq!(r.tokens, vec![0, 0, 0, 0]);
        assert_eq!(evaluate(&BigramPolicy::uniform(vocab), &[p], 4), 0.0);
    }
}
