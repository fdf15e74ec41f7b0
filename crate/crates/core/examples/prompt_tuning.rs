// Learns a domain prompt for a frozen pretrained model and compares dev
// perplexity with and without it.

use anyhow::{ensure, Result};
use domprompt::adaptation::{train_prompt, DomainPrompt, PromptInit, Method, TrainJob};
use domprompt::harness::{
    builtin_domain, builtin_domain_names, generic_corpus, pretrain_from_text, split_corpus, synthesize_domain,
};
use domprompt::model::{encode_corpus, LanguageModel, ModelConfig, Prefix, TrainHyper};
use domprompt::tokenizer::{Tokenizer, Vocab};

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
        epochs: 6,
        batch_tokens: 128,
        patience: None,
        seed: 3,
    };
    let (model, vocab, _) = pretrain_from_text(&generic_corpus(&specs, 300, 40, 8, 1), 5_000, &arch, &hyper)?;
    Ok((model, vocab))
}

pub fn run_example() -> Result<()> {
    let (model, vocab) = small_base()?;
    let domain = synthesize_domain(&builtin_domain("healthcare", 250, 10, 7)?)?;
    let (train, dev) = split_corpus(&domain.corpus, 0.8, 5)?;

    let job = TrainJob {
        domain: "healthcare".into(),
        method: Method::Prompt { k: 10, init: PromptInit::Vocab },
        hyper: TrainHyper {
            lr: 3e-2,
            epochs: 8,
            batch_tokens: 128,
            patience: Some(3),
            seed: 11,
        },
        train,
        dev: dev.clone(),
    };
    let theta_before = model.params().theta_blob();
    let (prompt, log) = train_prompt(&model, &vocab, &job, 10, PromptInit::Vocab)?;
    ensure!(model.params().theta_blob() == theta_before, "backbone changed");
    for (epoch, ppl) in log.dev_perplexity.iter().enumerate() {
        println!("epoch {epoch}: dev perplexity {ppl:.3}");
    }
    println!("kept epoch {} ({} optimizer steps)", log.best_epoch, prompt.steps);

    let dev_ids = encode_corpus(&vocab, &dev, usize::MAX);
    let base = model.corpus_perplexity(dev_ids.iter().map(Vec::as_slice), Prefix::None)?;
    let cache = model.build_prefix_cache(&prompt)?;
    let tuned = model.corpus_perplexity(dev_ids.iter().map(Vec::as_slice), Prefix::Cached(&cache))?;
    ensure!(tuned < base, "the learned prompt should lower dev perplexity");
    println!("dev perplexity: {base:.3} without prompt, {tuned:.3} with a {}x{} prompt", prompt.k(), prompt.d());

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("healthcare.dpmt");
    prompt.save(&path)?;
    let loaded = DomainPrompt::<f32>::load(&path)?;
    let ids = vocab.encode(&dev[0]).ids;
    let plain = model.sequence_score(&ids, Prefix::None)?;
    let primed = model.sequence_score(&ids, Prefix::Rows(&loaded.matrix))?;
    println!(
        "\"{}\": log p = {:.3} without, {:.3} with the saved prompt",
        dev[0], plain.total_logprob, primed.total_logprob
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
