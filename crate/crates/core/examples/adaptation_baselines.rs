// Every adaptation method on one small domain: trainable parameters and the
// best dev perplexity each reaches, with the backbone checked unchanged.

use anyhow::{ensure, Result};
use domprompt::adaptation::{count_trainable, train_baseline, Adapted, Method, TrainJob};
use domprompt::harness::{
    builtin_domain, builtin_domain_names, generic_corpus, pretrain_from_text, split_corpus, synthesize_domain,
};
use domprompt::model::{LanguageModel, ModelConfig, TrainHyper};
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
    let domain = synthesize_domain(&builtin_domain("insurance", 200, 10, 4)?)?;
    let (train, dev) = split_corpus(&domain.corpus, 0.8, 2)?;
    let backbone = model.params().to_blob();

    let methods = [
        ("no-adaptation", 0.0),
        ("fixed-prompt:10", 0.0),
        ("domain-embedding", 1e-2),
        ("prompt:10", 1e-2),
        ("embedding", 1e-3),
        ("adapter:4", 1e-3),
        ("full", 1e-3),
    ];
    println!("{:<22} {:>10} {:>10}", "method", "trainable", "dev ppl");
    for (spec, lr) in methods {
        let method = Method::parse(spec)?;
        let job = TrainJob {
            domain: domain.name.clone(),
            method,
            hyper: TrainHyper {
                lr,
                epochs: 2,
                batch_tokens: 128,
                patience: Some(3),
                seed: 9,
            },
            train: train.clone(),
            dev: dev.clone(),
        };
        let result = train_baseline(&model, &vocab, &job)?;
        ensure!(result.trainable == count_trainable(&method, model.config()), "count mismatch");
        let kind = match &result.adapted {
            Adapted::Base => "",
            Adapted::Prompt { words: Some(_), .. } => " (untrained)",
            Adapted::Prompt { .. } => " (prompt)",
            Adapted::Model(_) => " (new backbone)",
            Adapted::Adapters(_) => " (adapters)",
        };
        println!(
            "{:<22} {:>10} {:>10.3}{kind}",
            method.name(),
            result.trainable,
            result.best_dev_perplexity().unwrap_or(f64::NAN)
        );
    }
    ensure!(model.params().to_blob() == backbone, "the shared backbone must stay frozen");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
