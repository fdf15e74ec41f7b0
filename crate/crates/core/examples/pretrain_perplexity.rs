// Pretrains a small decoder-only model on synthetic generic text and
// reports held-out perplexity before and after, then round-trips the
// checkpoint.

use anyhow::Result;
use domprompt::harness::{builtin_domain, builtin_domain_names, generic_corpus, pretrain_from_text};
use domprompt::model::{encode_corpus, load_checkpoint, save_checkpoint, LanguageModel, ModelConfig, Prefix, TrainHyper};

pub fn run_example() -> Result<()> {
    let specs = builtin_domain_names()
        .iter()
        .map(|n| builtin_domain(n, 100, 10, 0))
        .collect::<domprompt::error::Result<Vec<_>>>()?;
    let generic = generic_corpus(&specs, 120, 40, 4, 1);
    let held_out = generic_corpus(&specs, 20, 10, 1, 2);
    println!("{} pretraining lines, {} held out", generic.len(), held_out.len());

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
    let (model, vocab, log) = pretrain_from_text::<f32, _>(&generic, 5_000, &arch, &hyper)?;
    println!("vocabulary {} words, {} parameters", vocab.len(), model.config().param_count());
    let tokens: usize = encode_corpus(&vocab, &generic, 63).iter().map(Vec::len).sum();
    for (i, l) in log.epoch_losses.iter().enumerate() {
        println!("epoch {}: mean training loss {:.3}", i + 1, l / tokens as f64);
    }

    let eval = encode_corpus(&vocab, &held_out, 63);
    let untrained = LanguageModel::<f32>::init(model.config().clone())?;
    let before = untrained.corpus_perplexity(eval.iter().map(Vec::as_slice), Prefix::None)?;
    let after = model.corpus_perplexity(eval.iter().map(Vec::as_slice), Prefix::None)?;
    println!("held-out perplexity: {before:.1} untrained, {after:.2} pretrained");

    let dir = tempfile::tempdir()?;
    let fingerprint = save_checkpoint(dir.path(), &model, &vocab)?;
    let (reloaded, _) = load_checkpoint::<f32>(dir.path())?;
    anyhow::ensure!(reloaded.fingerprint() == &fingerprint, "checkpoint fingerprint changed");
    println!("checkpoint fingerprint {fingerprint}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
