// The full method comparison on a shipped synthetic suite: writes the data,
// pretrains a base model, adapts per domain and prints the WERR table.
// Pass `--full` for the default-sized suite and recipe (several minutes).

use anyhow::Result;
use domprompt::harness::{pretrain_from_text, run_experiment, write_suite, ExperimentConfig, MethodConfig, SuiteOptions};
use domprompt::model::{save_checkpoint, ModelConfig, TrainHyper};

pub fn run_example() -> Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    let dir = tempfile::tempdir()?;
    let opts = if full {
        SuiteOptions::default()
    } else {
        SuiteOptions {
            domains: vec!["airlines".into(), "healthcare".into()],
            sentences: 150,
            eval_utterances: 30,
            dev_utterances: 10,
            generic_per_domain: 100,
            chit_chat: 30,
            session_len: 4,
            seed: 0,
        }
    };
    let config_path = write_suite(dir.path(), &opts)?;
    let generic = std::fs::read_to_string(dir.path().join("generic.txt"))?;
    let lines: Vec<&str> = generic.lines().collect();
    let arch = if full {
        ModelConfig::toy(0)
    } else {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 32,
            d_ff: 64,
            max_positions: 64,
            ..ModelConfig::toy(0)
        }
    };
    let hyper = TrainHyper {
        lr: if full { 1e-3 } else { 3e-3 },
        epochs: 3,
        batch_tokens: 256,
        patience: None,
        seed: 0,
    };
    let (model, vocab, _) = pretrain_from_text::<f32, _>(&lines, 10_000, &arch, &hyper)?;
    save_checkpoint(&dir.path().join("base"), &model, &vocab)?;

    let mut config = ExperimentConfig::load(&config_path)?;
    if !full {
        config.methods = ["no-adaptation", "fixed-prompt:5", "domain-embedding", "prompt:5", "adapter:8", "embedding"]
            .iter()
            .map(|m| MethodConfig {
                epochs: 2,
                ..MethodConfig::new(m)
            })
            .collect();
    }
    let out = run_experiment::<f32>(&config)?;
    print!("{}", out.report.table());
    for d in &out.report.domains {
        if let Some(e) = &d.eval {
            println!(
                "{}: no-rescoring WER {:.2}%, oracle WER {:.2}%",
                d.domain,
                100.0 * e.baseline_wer,
                100.0 * e.oracle_wer
            );
        }
    }
    println!("wrote {}", config.output_dir.join("report.json").display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
