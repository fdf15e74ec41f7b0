use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use domprompt::adaptation::artifact::save_result;
use domprompt::adaptation::{Manifest, Method, PromptInit};
use domprompt::harness::{
    pretrain_from_text, run_experiment, split_corpus, sub_seed, train_method, write_suite, ExperimentConfig, MethodConfig,
    SecondPass, SuiteOptions, LARGE_DATA, LOW_DATA,
};
use domprompt::model::{
    encode_corpus, load_checkpoint, save_checkpoint, DecodeMode, LanguageModel, ModelConfig,
    Prefix, TrainHyper,
};
use domprompt::numerics::{Precision, Scalar};
use domprompt::rescoring::{
    evaluate, load_nbest, rescore, RescoreWeights, Scorer, ScorerPrefix, System,
};

#[derive(Parser)]
#[command(name = "domprompt", version, about = "Domain prompts for LM adaptation and n-best rescoring")]
struct Cli {
    /// Root seed; every stage derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "f32")]
    precision: Precision,
    /// Experiment config (TOML); required by `experiment`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a base model on generic text (one sentence per line).
    Pretrain(PretrainArgs),
    /// Write the synthetic multi-domain suite and an experiment config.
    Synth(SynthArgs),
    /// Learn a domain prompt with the base model frozen.
    TrainPrompt(TrainPromptArgs),
    /// Train a comparison method (embedding, adapter:C, full, ...).
    TrainBaseline(TrainBaselineArgs),
    /// Print total log-probability and perplexity per input line.
    Score(ScoreArgs),
    /// Continue a seed text.
    Generate(GenerateArgs),
    /// Rescore an n-best file and print the selections as JSON lines.
    Rescore(RescoreArgs),
    /// WER / WERR / oracle WER of one or more second-pass systems.
    Eval(EvalArgs),
    /// Run the full method comparison described by `--config`.
    Experiment,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 256)]
    d_ff: usize,
    #[arg(long, default_value_t = 128)]
    max_positions: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    /// Give prompt rows no positional embedding (tokens then start at 1).
    #[arg(long)]
    no_prompt_positions: bool,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_tokens: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of airlines,fastfood,healthcare,insurance.
    #[arg(long, value_delimiter = ',')]
    domains: Option<Vec<String>>,
    /// `low` (1k sentences per domain) or `large` (50k).
    #[arg(long, default_value = "low")]
    size: String,
    /// Overrides `--size`.
    #[arg(long)]
    sentences: Option<usize>,
    #[arg(long, default_value_t = 200)]
    eval_utterances: usize,
    #[arg(long, default_value_t = 100)]
    dev_utterances: usize,
    #[arg(long, default_value_t = 1000)]
    generic_per_domain: usize,
}

#[derive(Args)]
struct TrainCommon {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Domain text, one sentence per line; split 80:20 into train and dev.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    domain: String,
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
    /// Learning-rate grid (comma-separated); defaults depend on the method.
    #[arg(long, value_delimiter = ',')]
    lrs: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_tokens: usize,
    #[arg(long, default_value_t = 3)]
    patience: usize,
}

#[derive(Args)]
struct TrainPromptArgs {
    #[command(flatten)]
    common: TrainCommon,
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long, default_value = "vocab")]
    init: PromptInit,
    /// Output `.dpmt` file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainBaselineArgs {
    #[command(flatten)]
    common: TrainCommon,
    /// e.g. `embedding`, `full`, `adapter:16`, `fixed-prompt:20`, `domain-embedding`.
    #[arg(long)]
    method: String,
    /// Output directory for the artifact and its manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Adaptation artifact: `.dpmt` prompt, adapter blob, or checkpoint dir.
    #[arg(long)]
    artifact: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Text file; stdin when omitted.
    #[arg(long)]
    text: Option<PathBuf>,
    /// Report the mean instead of the summed log-probability.
    #[arg(long)]
    per_token: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    seed_text: String,
    #[arg(long, default_value_t = 20)]
    max_new: usize,
    /// Sample from the `k` most likely tokens instead of greedy decoding.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
}

#[derive(Args)]
struct WeightArgs {
    /// λ_am,λ_flm,λ_lm
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0, 1.0, 1.0])]
    weights: Vec<f64>,
    #[arg(long)]
    per_token: bool,
}

impl WeightArgs {
    fn weights(&self) -> Result<RescoreWeights> {
        Ok(RescoreWeights::new(self.weights[0], self.weights[1], self.weights[2])?)
    }
}

#[derive(Args)]
struct RescoreArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    nbest: PathBuf,
    #[command(flatten)]
    weights: WeightArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    nbest: PathBuf,
    /// Adapted systems to compare with the unadapted model (repeatable).
    #[arg(long)]
    artifact: Vec<PathBuf>,
    #[command(flatten)]
    weights: WeightArgs,
    /// Also write the structured report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn second_pass<S: Scalar>(base: &LanguageModel<S>, artifact: Option<&Path>) -> Result<SecondPass<S>> {
    Ok(match artifact {
        Some(p) => SecondPass::load(base, p).with_context(|| format!("loading {}", p.display()))?,
        None => SecondPass {
            model: base.clone(),
            prefix: ScorerPrefix::None,
        },
    })
}

fn cmd_pretrain<S: Scalar>(seed: u64, a: &PretrainArgs) -> Result<()> {
    let lines = read_lines(&a.corpus)?;
    let arch = ModelConfig {
        n_layers: a.layers,
        n_heads: a.heads,
        d_model: a.d_model,
        d_ff: a.d_ff,
        vocab_size: 0,
        max_positions: a.max_positions,
        dropout: a.dropout,
        seed: sub_seed(seed, "init"),
        prompt_positions: !a.no_prompt_positions,
    };
    let hyper = TrainHyper {
        lr: a.lr,
        epochs: a.epochs,
        batch_tokens: a.batch_tokens,
        patience: None,
        seed: sub_seed(seed, "pretrain"),
    };
    let (model, vocab, log) = pretrain_from_text::<S, _>(&lines, a.vocab_size, &arch, &hyper)?;
    let corpus = encode_corpus(&vocab, &lines, usize::MAX);
    let tokens: usize = corpus.iter().map(|s| s.len().min(a.max_positions - 1)).sum();
    for (i, l) in log.epoch_losses.iter().enumerate() {
        println!("epoch {}: mean loss {:.4}", i + 1, l / tokens as f64);
    }
    let fp = save_checkpoint(&a.out, &model, &vocab)?;
    println!("saved {} ({} parameters, fingerprint {fp})", a.out.display(), model.config().param_count());
    Ok(())
}

fn cmd_synth(seed: u64, a: &SynthArgs) -> Result<()> {
    let sentences = match (a.sentences, a.size.as_str()) {
        (Some(n), _) => n,
        (None, "low") => LOW_DATA,
        (None, "large") => LARGE_DATA,
        (None, other) => bail!("unknown size `{other}` (low | large)"),
    };
    let mut opts = SuiteOptions {
        sentences,
        eval_utterances: a.eval_utterances,
        dev_utterances: a.dev_utterances,
        generic_per_domain: a.generic_per_domain,
        seed,
        ..SuiteOptions::default()
    };
    if let Some(d) = &a.domains {
        opts.domains = d.clone();
    }
    let path = write_suite(&a.out, &opts)?;
    println!("wrote suite to {} (config {})", a.out.display(), path.display());
    Ok(())
}

fn split(seed: u64, c: &TrainCommon) -> Result<(Vec<String>, Vec<String>)> {
    let lines = read_lines(&c.corpus)?;
    Ok(split_corpus(&lines, c.split_ratio, sub_seed(seed, &format!("split/{}", c.domain)))?)
}

fn method_config(spec: String, c: &TrainCommon) -> MethodConfig {
    MethodConfig {
        method: spec,
        lrs: c.lrs.clone(),
        epochs: c.epochs,
        batch_tokens: c.batch_tokens,
        patience: Some(c.patience),
    }
}

fn cmd_train<S: Scalar>(seed: u64, c: &TrainCommon, spec: String, out: &Path, prompt_file: bool) -> Result<()> {
    let (base, vocab) = load_checkpoint::<S>(&c.checkpoint)?;
    let (train, dev) = split(seed, c)?;
    let mconf = method_config(spec, c);
    let train_seed = sub_seed(seed, &format!("train/{}", c.domain));
    let (lr, result) = train_method(&base, &vocab, &c.domain, &mconf, &train, &dev, train_seed)?;
    println!(
        "{}: lr {:?}, dev perplexity per epoch {:?}, best epoch {}",
        result.method.name(),
        lr,
        result.log.dev_perplexity,
        result.log.best_epoch
    );
    if prompt_file {
        let domprompt::adaptation::Adapted::Prompt { prompt, .. } = &result.adapted else {
            bail!("prompt training returned no prompt");
        };
        prompt.save(out)?;
        println!("saved {}", out.display());
        return Ok(());
    }
    let entry = save_result(out, &c.domain, &result, base.fingerprint(), &vocab)?;
    let manifest_path = out.join("manifest.json");
    let mut manifest = if manifest_path.exists() {
        Manifest::load(&manifest_path)?
    } else {
        Manifest {
            base_fingerprint: Some(base.fingerprint().clone()),
            entries: vec![],
        }
    };
    manifest.entries.retain(|e| !(e.domain == entry.domain && e.method == entry.method));
    manifest.entries.push(entry);
    manifest.save(&manifest_path)?;
    println!("updated {}", manifest_path.display());
    Ok(())
}

fn cmd_score<S: Scalar>(a: &ScoreArgs) -> Result<()> {
    let (base, vocab) = load_checkpoint::<S>(&a.model.checkpoint)?;
    let pass = second_pass(&base, a.model.artifact.as_deref())?;
    let lines = match &a.text {
        Some(p) => read_lines(p)?,
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            s.lines().map(str::to_string).filter(|l| !l.trim().is_empty()).collect()
        }
    };
    let scorer = pass.scorer(&vocab, a.per_token);
    for line in lines {
        let lp = scorer.lm_logprob(&line)?;
        let tokens = domprompt::tokenizer::words(&line).count().max(1);
        let total = if a.per_token { lp * tokens as f64 } else { lp };
        println!("{:.6}\t{:.4}\t{}", lp, (-total / tokens as f64).exp(), line);
    }
    Ok(())
}

fn cmd_generate<S: Scalar>(seed: u64, a: &GenerateArgs) -> Result<()> {
    let (base, vocab) = load_checkpoint::<S>(&a.model.checkpoint)?;
    let pass = second_pass(&base, a.model.artifact.as_deref())?;
    let mode = match a.top_k {
        Some(k) => DecodeMode::TopK {
            k,
            temperature: a.temperature,
            seed: sub_seed(seed, "generate"),
        },
        None => DecodeMode::Greedy,
    };
    let prefix = match &pass.prefix {
        ScorerPrefix::None => Prefix::None,
        ScorerPrefix::Rows(m) => Prefix::Rows(m),
        ScorerPrefix::Cached(c) => Prefix::Cached(c),
    };
    println!("{}", pass.model.generate(&vocab, prefix, &a.seed_text, a.max_new, &mode)?);
    Ok(())
}

fn cmd_rescore<S: Scalar>(a: &RescoreArgs) -> Result<()> {
    let (base, vocab) = load_checkpoint::<S>(&a.model.checkpoint)?;
    let pass = second_pass(&base, a.model.artifact.as_deref())?;
    let lists = load_nbest(&a.nbest)?;
    let scorer = pass.scorer(&vocab, a.weights.per_token);
    for (sel, list) in rescore(&lists, &scorer, &a.weights.weights()?).iter().zip(&lists) {
        let line = serde_json::json!({
            "utt_id": sel.utt_id,
            "index": sel.index,
            "text": list.hyps[sel.index].text,
            "error": sel.error,
        });
        println!("{line}");
    }
    Ok(())
}

fn cmd_eval<S: Scalar>(a: &EvalArgs) -> Result<()> {
    let (base, vocab) = load_checkpoint::<S>(&a.checkpoint)?;
    let lists = load_nbest(&a.nbest)?;
    let weights = a.weights.weights()?;
    let mut passes = vec![("no-adaptation".to_string(), second_pass(&base, None)?, 0)];
    for p in &a.artifact {
        let pass = second_pass(&base, Some(p))?;
        let trainable = match &pass.prefix {
            ScorerPrefix::Cached(c) => c.len() * base.config().d_model,
            _ => pass.model.adapters().map_or(0, |s| s.count()),
        };
        let name = p.file_name().map_or("artifact".into(), |n| n.to_string_lossy().into_owned());
        passes.push((name, pass, trainable));
    }
    let scorers: Vec<_> = passes.iter().map(|(_, p, _)| p.scorer(&vocab, a.weights.per_token)).collect();
    let systems: Vec<System<'_>> = passes
        .iter()
        .zip(&scorers)
        .map(|((name, _, trainable), scorer)| System {
            name: name.clone(),
            trainable_params: *trainable,
            scorer,
            weights,
        })
        .collect();
    let report = evaluate(&lists, &systems)?;
    print!("{}", report.table());
    if let Some(path) = &a.json {
        fs::write(path, report.to_json()?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_experiment<S: Scalar>(cli: &Cli) -> Result<()> {
    let Some(path) = &cli.config else {
        bail!("`experiment` needs --config <path>");
    };
    let config = ExperimentConfig::load(path)?;
    config.check_paths()?;
    let out = run_experiment::<S>(&config)?;
    print!("{}", out.report.table());
    for c in out.report.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!("{} / {}: {}", c.domain, c.method, c.error.as_deref().unwrap_or_default());
    }
    println!("report and manifest written to {}", config.output_dir.display());
    Ok(())
}

fn run<S: Scalar>(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Pretrain(a) => cmd_pretrain::<S>(cli.seed, a),
        Command::Synth(a) => cmd_synth(cli.seed, a),
        Command::TrainPrompt(a) => {
            let spec = format!("prompt:{}:{}", a.k, if a.init == PromptInit::Random { "random" } else { "vocab" });
            Method::parse(&spec)?;
            cmd_train::<S>(cli.seed, &a.common, spec, &a.out, true)
        }
        Command::TrainBaseline(a) => cmd_train::<S>(cli.seed, &a.common, a.method.clone(), &a.out, false),
        Command::Score(a) => cmd_score::<S>(a),
        Command::Generate(a) => cmd_generate::<S>(cli.seed, a),
        Command::Rescore(a) => cmd_rescore::<S>(a),
        Command::Eval(a) => cmd_eval::<S>(a),
        Command::Experiment => cmd_experiment::<S>(cli),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.precision {
        Precision::F32 => run::<f32>(&cli),
        Precision::F64 => run::<f64>(&cli),
    }
}
