use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{DomainConfig, ExperimentConfig, MethodConfig};
use crate::harness::seeds::sub_seed;
use crate::harness::synth::{builtin_domain, builtin_domain_names, generic_corpus, synthesize_domain};
use crate::rescoring::{save_nbest, RescoreWeights};

/// Sentences per domain in the low-data setting.
pub const LOW_DATA: usize = 1_000;
/// Sentences per domain in the large-data setting.
pub const LARGE_DATA: usize = 50_000;

/// What `write_suite` generates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub domains: Vec<String>,
    pub sentences: usize,
    pub eval_utterances: usize,
    pub dev_utterances: usize,
    pub generic_per_domain: usize,
    pub chit_chat: usize,
    pub session_len: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            domains: builtin_domain_names().iter().map(|s| s.to_string()).collect(),
            sentences: LOW_DATA,
            eval_utterances: 200,
            dev_utterances: 100,
            generic_per_domain: 1_000,
            chit_chat: 400,
            session_len: 8,
            seed: 0,
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn lines(xs: &[String]) -> String {
    let mut s = xs.join("\n");
    s.push('\n');
    s
}

/// Writes the shipped synthetic suite into `dir`: `generic.txt` (pretraining
/// text over every shipped domain), and per requested domain `<d>.txt`,
/// `<d>.nbest.jsonl` and `<d>.dev.nbest.jsonl`, plus an `experiment.toml`
/// comparing the standard methods. Returns the config path.
pub fn write_suite(dir: &Path, opts: &SuiteOptions) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let all: Vec<_> = builtin_domain_names()
        .iter()
        .map(|n| builtin_domain(n, opts.sentences, opts.eval_utterances, opts.seed))
        .collect::<Result<_>>()?;
    let generic = generic_corpus(&all, opts.generic_per_domain, opts.chit_chat, opts.session_len, opts.seed);
    write(&dir.join("generic.txt"), &lines(&generic))?;

    let mut domains = Vec::new();
    for name in &opts.domains {
        let spec = builtin_domain(name, opts.sentences, opts.eval_utterances, opts.seed)?;
        let data = synthesize_domain(&spec)?;
        let mut dev_spec = spec.clone();
        dev_spec.sentences = 0;
        dev_spec.eval_utterances = opts.dev_utterances;
        dev_spec.seed = sub_seed(spec.seed, "dev-nbest");
        let dev = synthesize_domain(&dev_spec)?;
        write(&dir.join(format!("{name}.txt")), &lines(&data.corpus))?;
        save_nbest(&dir.join(format!("{name}.nbest.jsonl")), &data.nbest)?;
        save_nbest(&dir.join(format!("{name}.dev.nbest.jsonl")), &dev.nbest)?;
        domains.push(DomainConfig {
            name: name.clone(),
            corpus: format!("{name}.txt").into(),
            nbest: format!("{name}.nbest.jsonl").into(),
            dev_nbest: Some(format!("{name}.dev.nbest.jsonl").into()),
        });
    }
    let methods = [
        "no-adaptation",
        "embedding",
        "fixed-prompt:20",
        "domain-embedding",
        "adapter:16",
        "full",
        "prompt:10",
        "prompt:50",
    ]
    .iter()
    .map(|m| MethodConfig::new(m))
    .collect();
    let config = ExperimentConfig {
        checkpoint: "base".into(),
        output_dir: "results".into(),
        split_ratio: 0.8,
        seed: opts.seed,
        domains,
        methods,
        weights: RescoreWeights::default(),
        weight_grid: None,
        per_token: false,
    };
    let path = dir.join("experiment.toml");
    write(&path, &config.to_toml()?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rescoring::load_nbest;

    #[test]
    fn writes_a_loadable_suite() {
        let dir = tempfile::tempdir().unwrap();
        let opts = SuiteOptions {
            domains: vec!["airlines".into()],
            sentences: 20,
            eval_utterances: 5,
            dev_utterances: 3,
            generic_per_domain: 10,
            chit_chat: 5,
            ..SuiteOptions::default()
        };
        let path = write_suite(dir.path(), &opts).unwrap();
        let config = ExperimentConfig::load(&path).unwrap();
        assert_eq!(config.domains.len(), 1);
        assert_eq!(load_nbest(&config.domains[0].nbest).unwrap().len(), 5);
        let corpus = fs::read_to_string(&config.domains[0].corpus).unwrap();
        assert_eq!(corpus.lines().count(), 20);
        assert!(dir.path().join("generic.txt").exists());
    }
}
