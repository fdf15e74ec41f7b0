// Greedy and top-k continuations from a pretrained model, with and without
// a learned domain prompt.

use anyhow::Result;
use domprompt::adaptation::{train_prompt, Method, PromptInit, TrainJob};
use domprompt::harness::{builtin_domain, builtin_domain_names, generic_corpus, pretrain_from_text, synthesize_domain};
use domprompt::model::{DecodeMode, LanguageModel, ModelConfig, Prefix, TrainHyper};
use domprompt::tokenizer::Vocab;

fn small_base() -> Result<(LanguageModel<f32>, Vocab)> {
    let specs = builtin_domain_names()
        .iter()
        .map(|n| builtin_domain(n, 100, 10, 0))
        .collect::<domprompt::error::Result<Vec<_>>>()?;
    let arch = ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 32,
        d_ff: 64,
        max_positions: 64,
        ..ModelConfig::toy(0)
    };
    let hyper = TrainHyper {
        lr: 3e-3,
        epochs: 3,
        batch_tokens: 128,
        patience: None,
        seed: 3,
    };
    let (model, vocab, _) = pretrain_from_text(&generic_corpus(&specs, 120, 40, 4, 1), 5_000, &arch, &hyper)?;
    Ok((model, vocab))
}

pub fn run_example() -> Result<()> {
    let (model, vocab) = small_base()?;
    let domain = synthesize_domain(&builtin_domain("airlines", 200, 10, 3)?)?;
    let job = TrainJob {
        domain: "airlines".into(),
        method: Method::Prompt { k: 5, init: PromptInit::Vocab },
        hyper: TrainHyper {
            lr: 1e-2,
            epochs: 3,
            batch_tokens: 128,
            patience: None,
            seed: 1,
        },
        train: domain.corpus.clone(),
        dev: vec![],
    };
    let (prompt, _) = train_prompt(&model, &vocab, &job, 5, PromptInit::Vocab)?;
    let cache = model.build_prefix_cache(&prompt)?;

    let sample = DecodeMode::TopK {
        k: 5,
        temperature: 0.8,
        seed: 42,
    };
    for seed_text in ["i want to", "can you"] {
        let plain = model.generate(&vocab, Prefix::None, seed_text, 8, &DecodeMode::Greedy)?;
        let primed = model.generate(&vocab, Prefix::Cached(&cache), seed_text, 8, &DecodeMode::Greedy)?;
        let sampled = model.generate(&vocab, Prefix::Cached(&cache), seed_text, 8, &sample)?;
        println!("seed: {seed_text}");
        println!("  greedy:           {plain}");
        println!("  greedy, airlines: {primed}");
        println!("  top-5, airlines:  {sampled}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
