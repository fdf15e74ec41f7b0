// Scoring latency with a cached domain prompt versus recomputing the prompt
// for every sentence, for several prompt lengths.

use std::time::Instant;

use anyhow::{ensure, Result};
use domprompt::adaptation::{init_prompt, PromptInit};
use domprompt::harness::{builtin_domain, synthesize_domain};
use domprompt::model::{encode_corpus, LanguageModel, ModelConfig, Prefix};
use domprompt::tokenizer::Vocab;

fn time_scoring(model: &LanguageModel<f32>, corpus: &[Vec<usize>], prefix: Prefix<'_, f32>, reps: usize) -> Result<f64> {
    let start = Instant::now();
    for _ in 0..reps {
        for s in corpus {
            model.sequence_score(s, prefix)?;
        }
    }
    Ok(start.elapsed().as_secs_f64() * 1e3 / (reps * corpus.len()) as f64)
}

fn report(label: &str, config: ModelConfig, vocab: &Vocab, lines: &[String], reps: usize) -> Result<()> {
    let model = LanguageModel::<f32>::init(config)?;
    let corpus = encode_corpus(vocab, lines, usize::MAX);
    let base = time_scoring(&model, &corpus, Prefix::None, reps)?;
    println!("{label}");
    println!("{:>5} {:>12} {:>12} {:>10}", "k", "cached ms", "uncached ms", "overhead");
    println!("{:>5} {:>12.3} {:>12} {:>10}", 0, base, "-", "-");
    let mut cached_times = Vec::new();
    for k in [1, 50, 200] {
        let prompt = init_prompt("airlines", PromptInit::Random, k, &model, vocab, lines, k as u64)?;
        let cache = model.build_prefix_cache(&prompt)?;
        let cached = time_scoring(&model, &corpus, Prefix::Cached(&cache), reps)?;
        let uncached = time_scoring(&model, &corpus, Prefix::Rows(&prompt.matrix), reps)?;
        println!(
            "{k:>5} {cached:>12.3} {uncached:>12.3} {:>9.1}%",
            100.0 * (cached - base) / base
        );
        let a = model.sequence_score(&corpus[0], Prefix::Cached(&cache))?.total_logprob;
        let b = model.sequence_score(&corpus[0], Prefix::Rows(&prompt.matrix))?.total_logprob;
        ensure!((a - b).abs() <= 1e-5 * a.abs(), "cached and uncached scores differ");
        cached_times.push(cached);
    }
    let min = cached_times.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = cached_times.iter().cloned().fold(0.0, f64::max);
    println!("cached variation across k: {:.1}%\n", 100.0 * (max - min) / min);
    Ok(())
}

/// Attention over `k` cached keys still costs `O(T·k·d)` per layer against
/// `O(T·d²)` for the projections, so the remaining overhead shrinks with width.
pub fn run_example() -> Result<()> {
    let reps: usize = std::env::var("REPS").ok().and_then(|v| v.parse().ok()).unwrap_or(1);
    let domain = synthesize_domain(&builtin_domain("airlines", 200, 10, 1)?)?;
    let vocab = Vocab::build(&domain.corpus, 5_000)?;
    let toy = ModelConfig {
        max_positions: 256,
        ..ModelConfig::toy(vocab.len())
    };
    report("toy width (L=4, d=64)", toy, &vocab, &domain.corpus[..40], reps)?;
    let wide = ModelConfig {
        n_layers: 1,
        n_heads: 12,
        d_model: 768,
        d_ff: 3072,
        max_positions: 256,
        ..ModelConfig::toy(vocab.len())
    };
    report("GPT-2 width (L=1, d=768)", wide, &vocab, &domain.corpus[..8], reps)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
