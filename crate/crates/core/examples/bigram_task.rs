//! The synthetic verifiable-reward task: token layout, the composite
//! reward, and sampling from a policy.
//!
//!     cargo run --example bigram_task

use pods::policy_env::{
    evaluate, greedy_decode, reward_breakdown, sample_rollout, BigramPolicy, Prompt, Vocab,
};

fn show(vocab: Vocab, tokens: &[usize]) -> String {
    tokens.iter().map(|&t| vocab.token_name(t)).collect::<Vec<_>>().join(" ")
}

fn main() -> pods::Result<()> {
    let vocab = Vocab::default();
    let prompt = Prompt::new(vocab, 3)?;
    println!("vocabulary of {} tokens; prompt asks for {}", vocab.size(), vocab.token_name(prompt.target_token()));

    let target = prompt.target_token();
    let examples = [
        vec![Vocab::THINK_OPEN, 7, Vocab::THINK_CLOSE, Vocab::ANS_OPEN, target, Vocab::ANS_CLOSE, Vocab::EOS],
        vec![Vocab::THINK_OPEN, Vocab::THINK_CLOSE, Vocab::ANS_OPEN, 6, Vocab::ANS_CLOSE, Vocab::EOS],
        vec![Vocab::ANS_OPEN, target, Vocab::EOS],
        vec![Vocab::THINK_OPEN, Vocab::THINK_OPEN, Vocab::ANS_OPEN, target, Vocab::ANS_CLOSE, Vocab::EOS],
    ];
    for tokens in &examples {
        let r = reward_breakdown(tokens, prompt, vocab);
        println!(
            "  {:<60} correct {} format {} tags {:.2} -> {:.2}",
            show(vocab, tokens),
            r.correctness,
            r.format,
            r.tag_count,
            r.total()
        );
    }

    let uniform = BigramPolicy::uniform(vocab);
    println!("\nsamples from the untrained policy:");
    for seed in 0..3 {
        let r = sample_rollout(&uniform, prompt, 16, seed);
        println!("  {}", show(vocab, &r.tokens));
    }

    let solved = BigramPolicy::reference_solution(vocab, 6.0);
    println!("\ngreedy decode of a hand-built solution: {}", show(vocab, &greedy_decode(&solved, prompt, 16).tokens));
    println!("accuracy: untrained {:.3}, hand-built {:.3}", evaluate(&uniform, &Prompt::all(vocab), 16), evaluate(&solved, &Prompt::all(vocab), 16));
    Ok(())
}
