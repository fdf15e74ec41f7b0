mod common;

use std::fs;
use std::path::Path;

use common::build_suite;
use domprompt::harness::{run_experiment, ExperimentConfig, MethodConfig, SuiteOptions};
use domprompt::model::{ModelConfig, TrainHyper};
use domprompt::rescoring::load_nbest;

fn small_suite(dir: &Path) -> ExperimentConfig {
    let opts = SuiteOptions {
        domains: vec!["airlines".into(), "insurance".into()],
        sentences: 60,
        eval_utterances: 12,
        dev_utterances: 6,
        generic_per_domain: 40,
        chit_chat: 10,
        session_len: 2,
        seed: 3,
    };
    let arch = ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        max_positions: 48,
        dropout: 0.0,
        ..ModelConfig::toy(0)
    };
    let hyper = TrainHyper {
        lr: 1e-2,
        epochs: 1,
        batch_tokens: 64,
        patience: None,
        seed: 1,
    };
    let mut config = build_suite(dir, &opts, &arch, &hyper);
    let quick = |m: &str| MethodConfig {
        lrs: Some(vec![1e-2]),
        epochs: 1,
        ..MethodConfig::new(m)
    };
    config.methods = ["no-adaptation", "prompt:4", "domain-embedding", "adapter:8", "fixed-prompt:3"]
        .iter()
        .map(|m| quick(m))
        .collect();
    config
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn experiments_are_reproducible_and_self_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_suite(dir.path());
    let first = run_experiment::<f32>(&config).unwrap();
    config.output_dir = dir.path().join("again");
    let second = run_experiment::<f32>(&config).unwrap();
    assert_eq!(first.report, second.report);
    let a = files(&dir.path().join("results"));
    let b = files(&dir.path().join("again"));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["manifest.json", "report.json", "report.txt"]);
    assert_eq!(a, b);
    assert_eq!(
        files(&dir.path().join("results/artifacts")),
        files(&dir.path().join("again/artifacts"))
    );

    let report = &first.report;
    assert_eq!(report.cells.len(), 10);
    assert!(report.cells.iter().all(|c| c.error.is_none()));
    for d in &config.domains {
        let lists = load_nbest(&d.nbest).unwrap();
        let result = report.domains.iter().find(|r| r.domain == d.name).unwrap();
        let eval = result.eval.as_ref().unwrap();
        eval.check_consistency(&lists).unwrap();
        for s in &eval.systems {
            assert!(eval.oracle_wer <= s.wer);
            let cell = report.cell(&d.name, &s.name).unwrap();
            assert_eq!(cell.wer, Some(s.wer));
            assert_eq!(cell.werr, Some(s.werr));
        }
    }
    first.manifest.verify(&dir.path().join("results/artifacts")).unwrap();
    let table = report.table();
    assert!(table.contains("airlines WERR %") && table.contains("oracle"));
}

#[test]
fn one_failing_method_does_not_stop_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_suite(dir.path());
    config.methods.truncate(2);
    // Forty prompt rows leave too few positions for the training sentences.
    config.methods.push(MethodConfig {
        lrs: Some(vec![1e-2]),
        epochs: 1,
        ..MethodConfig::new("prompt:40")
    });
    let out = run_experiment::<f32>(&config).unwrap();
    let failed: Vec<_> = out.report.cells.iter().filter(|c| c.error.is_some()).collect();
    assert_eq!(failed.len(), 2);
    assert!(failed.iter().all(|c| c.method == "domain-prompt(k=40)"));
    assert!(failed[0].error.as_deref().unwrap().contains("train/"));
    assert!(out.report.table().contains("failed"));
    assert!(out.report.cells.iter().filter(|c| c.error.is_none()).count() == 4);
}
