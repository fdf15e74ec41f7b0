// Rescores synthetic n-best lists with a pretrained model, tunes the
// interpolation weights on a dev set and reports WER against the first pass
// and the oracle.

use anyhow::Result;
use domprompt::harness::{builtin_domain, builtin_domain_names, generic_corpus, pretrain_from_text, synthesize_domain};
use domprompt::model::{LanguageModel, ModelConfig, TrainHyper};
use domprompt::rescoring::{
    evaluate, load_nbest, save_nbest, score_nbest, tune_weights, ModelScorer, RescoreWeights, System,
};
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
    let eval = synthesize_domain(&builtin_domain("fastfood", 10, 60, 21)?)?;
    let dev = synthesize_domain(&builtin_domain("fastfood", 10, 30, 22)?)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("fastfood.nbest.jsonl");
    save_nbest(&path, &eval.nbest)?;
    let lists = load_nbest(&path)?;
    let first = &lists[0];
    println!("utterance {} (ref: {:?})", first.utt_id, first.reference.as_deref().unwrap_or("-"));
    for h in &first.hyps {
        println!("  am {:>7.2}  flm {:>7.2}  {}", h.am_score, h.flm_score, h.text);
    }

    let scorer = ModelScorer::new(&model, &vocab);
    let tuned = tune_weights(&dev.nbest, &score_nbest(&dev.nbest, &scorer), &[0.0, 0.25, 0.5, 1.0, 2.0])?;
    println!("weights tuned on dev: am {} flm {} lm {}", tuned.am, tuned.flm, tuned.lm);

    let silent = |_: &str| Ok(0.0);
    let report = evaluate(
        &lists,
        &[
            System {
                name: "first-pass scores".into(),
                trainable_params: 0,
                scorer: &silent,
                weights: RescoreWeights::new(1.0, 1.0, 0.0)?,
            },
            System {
                name: "second-pass LM".into(),
                trainable_params: 0,
                scorer: &scorer,
                weights: RescoreWeights::default(),
            },
            System {
                name: "second-pass LM (tuned)".into(),
                trainable_params: 0,
                scorer: &scorer,
                weights: tuned,
            },
        ],
    )?;
    print!("{}", report.table());
    report.check_consistency(&lists)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
