//! A desk-scale verifiable-reward task.
//!
//! A small log-linear policy generates delimiter-structured token sequences
//! autoregressively, and a rule-based reward scores them for answer
//! correctness, exact format, and delimiter placement.

mod policy;
mod task;

pub use policy::{BigramPolicy, PolicySnapshot, POLICY_FORMAT, POLICY_VERSION};
pub use task::{
    answer_token, evaluate, greedy_decode, logprob_sequence, reward, reward_breakdown,
    sample_rollout, Prompt, RewardBreakdown, Rollout, Vocab, DEFAULT_CONTENT_TOKENS, DEFAULT_T_MAX,
};
