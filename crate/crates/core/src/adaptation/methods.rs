use serde::{Deserialize, Serialize};

use crate::adaptation::adapter::{AdapterConfig, AdapterSet};
use crate::adaptation::prompt::{init_prompt, DomainPrompt, PromptInit, PROMPT_KEY};
use crate::error::{Error, Result};
use crate::model::params::TOKEN_EMBEDDING;
use crate::model::{
    encode_corpus, fit, full_sequence_grads, DevFn, Dropout, KeyedTensor, LanguageModel, ModelConfig,
    Net, Parameters, Prefix, PrefixNode, TrainHyper, TrainLog,
};
use crate::numerics::{Gradients, Graph, Scalar};
use crate::tokenizer::{top_k_frequent, Tokenizer};

/// Number of frequent words used as a fixed, untrained prompt.
pub const FIXED_PROMPT_WORDS: usize = 20;

/// Second-pass language model variants compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    /// The pretrained model as is.
    NoAdaptation,
    /// Learned prefix embeddings; backbone frozen.
    Prompt { k: usize, init: PromptInit },
    /// A single learned domain-token embedding (prompt with `k = 1`).
    DomainEmbedding,
    /// The most frequent domain words' embeddings as an untrained prefix.
    FixedPrompt { words: usize },
    /// Token embedding `φ` trained, `θ` frozen.
    Embedding,
    /// Bottleneck adapters trained, backbone frozen.
    Adapter { reduction_factor: usize },
    /// Every backbone parameter trained.
    Full,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::NoAdaptation => "no-adaptation".into(),
            Method::Prompt { k, init } => format!(
                "domain-prompt(k={k}{})",
                if *init == PromptInit::Random { ",random" } else { "" }
            ),
            Method::DomainEmbedding => "domain-embedding".into(),
            Method::FixedPrompt { .. } => "prompt-designing".into(),
            Method::Embedding => "tuning-embedding".into(),
            Method::Adapter { reduction_factor } => format!("adapter(c={reduction_factor})"),
            Method::Full => "full-fine-tuning".into(),
        }
    }

    /// Parses `no-adaptation`, `prompt:50`, `prompt:50:random`,
    /// `domain-embedding`, `fixed-prompt[:20]`, `embedding`, `adapter:16`, `full`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize, default: Option<usize>| -> Result<usize> {
            match parts.get(i) {
                Some(v) => v.parse().map_err(|_| Error::UnknownMethod(s.to_string())),
                None => default.ok_or_else(|| Error::UnknownMethod(s.to_string())),
            }
        };
        let m = match parts[0] {
            "no-adaptation" | "none" => Method::NoAdaptation,
            "prompt" | "domain-prompt" => Method::Prompt {
                k: num(1, None)?,
                init: match parts.get(2) {
                    Some(i) => i.parse().map_err(|_| Error::UnknownMethod(s.to_string()))?,
                    None => PromptInit::Vocab,
                },
            },
            "domain-embedding" => Method::DomainEmbedding,
            "fixed-prompt" | "prompt-designing" => Method::FixedPrompt {
                words: num(1, Some(FIXED_PROMPT_WORDS))?,
            },
            "embedding" | "tuning-embedding" => Method::Embedding,
            "adapter" => Method::Adapter {
                reduction_factor: num(1, None)?,
            },
            "full" | "full-fine-tuning" => Method::Full,
            _ => return Err(Error::UnknownMethod(s.to_string())),
        };
        Ok(m)
    }

    /// Whether the method has a training step (and hence an lr grid).
    pub fn is_trained(&self) -> bool {
        !matches!(self, Method::NoAdaptation | Method::FixedPrompt { .. })
    }
}

/// Domain-specific parameters each method adds on top of the shared base model.
pub fn count_trainable(method: &Method, config: &ModelConfig) -> usize {
    let d = config.d_model;
    match method {
        Method::NoAdaptation | Method::FixedPrompt { .. } => 0,
        Method::Prompt { k, .. } => k * d,
        Method::DomainEmbedding => d,
        Method::Embedding => config.vocab_size * d,
        Method::Adapter { reduction_factor } => AdapterConfig {
            reduction_factor: *reduction_factor,
        }
        .param_count(config),
        Method::Full => config.param_count(),
    }
}

/// One adaptation run for one domain.
#[derive(Debug, Clone)]
pub struct TrainJob {
    pub domain: String,
    pub method: Method,
    pub hyper: TrainHyper,
    pub train: Vec<String>,
    pub dev: Vec<String>,
}

/// What an adaptation method produces.
#[derive(Debug, Clone)]
pub enum Adapted<S: Scalar> {
    /// Use the base model unchanged.
    Base,
    /// A prefix for the base model (trained prompt, domain embedding, or the
    /// fixed frequent-word prompt together with its word list).
    Prompt {
        prompt: DomainPrompt<S>,
        words: Option<Vec<String>>,
    },
    /// A new backbone (embedding or full fine-tuning).
    Model(LanguageModel<S>),
    Adapters(AdapterSet<S>),
}

/// Result of [`train_baseline`] / [`train_prompt`].
#[derive(Debug, Clone)]
pub struct AdaptationResult<S: Scalar> {
    pub method: Method,
    pub adapted: Adapted<S>,
    pub log: TrainLog,
    pub trainable: usize,
}

impl<S: Scalar> AdaptationResult<S> {
    pub fn best_dev_perplexity(&self) -> Option<f64> {
        self.log.best_dev_perplexity()
    }
}

fn encoded<T: Tokenizer>(tokenizer: &T, lines: &[String]) -> Vec<Vec<usize>> {
    encode_corpus(tokenizer, lines, usize::MAX)
}

/// Learns a domain prompt with `θ` and `φ` frozen, minimizing the summed
/// next-token loss of every training sentence with the prompt prefixed.
/// Returns the prompt with the lowest dev perplexity seen.
pub fn train_prompt<S: Scalar, T: Tokenizer>(
    model: &LanguageModel<S>,
    tokenizer: &T,
    job: &TrainJob,
    k: usize,
    init: PromptInit,
) -> Result<(DomainPrompt<S>, TrainLog)> {
    let initial = init_prompt(&job.domain, init, k, model, tokenizer, &job.train, job.hyper.seed)?;
    train_prompt_from(model, tokenizer, job, initial)
}

/// [`train_prompt`] starting from a given prompt.
pub fn train_prompt_from<S: Scalar, T: Tokenizer>(
    model: &LanguageModel<S>,
    tokenizer: &T,
    job: &TrainJob,
    initial: DomainPrompt<S>,
) -> Result<(DomainPrompt<S>, TrainLog)> {
    if &initial.base_fingerprint != model.fingerprint() {
        return Err(Error::FingerprintMismatch {
            expected: model.fingerprint().to_string(),
            found: initial.base_fingerprint.to_string(),
        });
    }
    let train = encoded(tokenizer, &job.train);
    let dev = encoded(tokenizer, &job.dev);
    let k = initial.k();
    let longest = train.iter().chain(&dev).map(Vec::len).max().unwrap_or(0);
    let needed = model.config().positions_needed(k, longest);
    if needed > model.config().max_positions {
        return Err(Error::SequenceTooLong {
            needed,
            max: model.config().max_positions,
        });
    }

    let mut grads_for =
        |state: &KeyedTensor<S>, seq: &[usize], _: Option<&mut Dropout>| prompt_grads(model, &state.value, seq);
    let mut dev_fn = |state: &KeyedTensor<S>| -> Result<f64> {
        let cache = model.prefix_cache_from_rows(&state.value)?;
        model.corpus_perplexity(dev.iter().map(Vec::as_slice), Prefix::Cached(&cache))
    };
    let state = KeyedTensor {
        key: PROMPT_KEY,
        value: initial.matrix.clone(),
    };
    let dev_opt: Option<&mut DevFn<'_, KeyedTensor<S>>> =
        if dev.is_empty() { None } else { Some(&mut dev_fn) };
    let (best, log) = fit(state, &train, &job.hyper, 0.0, &mut grads_for, dev_opt)?;
    let prompt = DomainPrompt {
        matrix: best.value,
        steps: log.steps(),
        dev_perplexity: log.best_dev_perplexity(),
        ..initial
    };
    Ok((prompt, log))
}

/// Loss and prompt gradient for one sentence.
pub fn prompt_grads<S: Scalar>(
    model: &LanguageModel<S>,
    prompt: &crate::numerics::Matrix<S>,
    seq: &[usize],
) -> Result<(f64, Gradients<S>)> {
    let mut g = Graph::new([PROMPT_KEY]);
    let mut net: Net<'_, S> = model.net();
    let p = g.param(prompt, PROMPT_KEY);
    let loss = net.sequence_loss(&mut g, &PrefixNode::Rows(p), seq, None)?;
    let value = g.value(loss).data()[0].as_f64();
    Ok((value, g.backward(loss)?))
}

/// Runs any adaptation method for `job`.
pub fn train_baseline<S: Scalar, T: Tokenizer>(
    model: &LanguageModel<S>,
    tokenizer: &T,
    job: &TrainJob,
) -> Result<AdaptationResult<S>> {
    let config = model.config().clone();
    let trainable = count_trainable(&job.method, &config);
    let dev = encoded(tokenizer, &job.dev);
    let dev_ppl_of = |m: &LanguageModel<S>, prefix: Prefix<'_, S>| -> Result<Vec<f64>> {
        if dev.is_empty() {
            Ok(vec![])
        } else {
            Ok(vec![m.corpus_perplexity(dev.iter().map(Vec::as_slice), prefix)?])
        }
    };
    let (adapted, log) = match job.method {
        Method::NoAdaptation => {
            let log = TrainLog {
                dev_perplexity: dev_ppl_of(model, Prefix::None)?,
                ..TrainLog::default()
            };
            (Adapted::Base, log)
        }
        Method::Prompt { k, init } => {
            let (prompt, log) = train_prompt(model, tokenizer, job, k, init)?;
            (Adapted::Prompt { prompt, words: None }, log)
        }
        Method::DomainEmbedding => {
            let (prompt, log) = train_prompt(model, tokenizer, job, 1, PromptInit::Vocab)?;
            (Adapted::Prompt { prompt, words: None }, log)
        }
        Method::FixedPrompt { words } => {
            let list = top_k_frequent(&job.train, words)?;
            let mut prompt =
                init_prompt(&job.domain, PromptInit::Vocab, words, model, tokenizer, &job.train, 0)?;
            let log = TrainLog {
                dev_perplexity: dev_ppl_of(model, Prefix::Rows(&prompt.matrix))?,
                ..TrainLog::default()
            };
            prompt.dev_perplexity = log.best_dev_perplexity();
            (
                Adapted::Prompt {
                    prompt,
                    words: Some(list),
                },
                log,
            )
        }
        Method::Embedding => {
            let (m, log) = train_backbone(model, tokenizer, job, &[TOKEN_EMBEDDING], 0.0)?;
            (Adapted::Model(m), log)
        }
        Method::Full => {
            let keys = model.params().keys();
            let (m, log) = train_backbone(model, tokenizer, job, &keys, config.dropout)?;
            (Adapted::Model(m), log)
        }
        Method::Adapter { reduction_factor } => {
            let (a, log) = train_adapters(model, tokenizer, job, AdapterConfig::new(reduction_factor)?)?;
            (Adapted::Adapters(a), log)
        }
    };
    Ok(AdaptationResult {
        method: job.method,
        adapted,
        log,
        trainable,
    })
}

fn train_backbone<S: Scalar, T: Tokenizer>(
    model: &LanguageModel<S>,
    tokenizer: &T,
    job: &TrainJob,
    keys: &[crate::numerics::ParamKey],
    dropout: f64,
) -> Result<(LanguageModel<S>, TrainLog)> {
    let config = model.config().clone();
    let train = encoded(tokenizer, &job.train);
    let dev = encoded(tokenizer, &job.dev);
    let mut grads_for = |params: &Parameters<S>, seq: &[usize], dr: Option<&mut Dropout>| {
        full_sequence_grads(&config, params, keys, seq, dr)
    };
    let mut dev_fn = |params: &Parameters<S>| -> Result<f64> {
        let m = LanguageModel::new(config.clone(), params.clone())?;
        m.corpus_perplexity(dev.iter().map(Vec::as_slice), Prefix::None)
    };
    let dev_opt: Option<&mut DevFn<'_, Parameters<S>>> =
        if dev.is_empty() { None } else { Some(&mut dev_fn) };
    let (params, log) = fit(
        model.params().clone(),
        &train,
        &job.hyper,
        dropout,
        &mut grads_for,
        dev_opt,
    )?;
    Ok((LanguageModel::new(config, params)?, log))
}

fn train_adapters<S: Scalar, T: Tokenizer>(
    model: &LanguageModel<S>,
    tokenizer: &T,
    job: &TrainJob,
    adapter: AdapterConfig,
) -> Result<(AdapterSet<S>, TrainLog)> {
    let config = model.config();
    let train = encoded(tokenizer, &job.train);
    let dev = encoded(tokenizer, &job.dev);
    let initial = AdapterSet::init(adapter, config, job.hyper.seed);
    let keys = initial.keys();
    let mut grads_for = |adapters: &AdapterSet<S>, seq: &[usize], _: Option<&mut Dropout>| {
        let mut g = Graph::new(keys.iter().copied());
        let mut net = Net::new(config, model.params(), Some(adapters));
        let loss = net.sequence_loss(&mut g, &PrefixNode::None, seq, None)?;
        let value = g.value(loss).data()[0].as_f64();
        Ok((value, g.backward(loss)?))
    };
    let mut dev_fn = |adapters: &AdapterSet<S>| -> Result<f64> {
        let m = model.clone().with_adapters(adapters.clone())?;
        m.corpus_perplexity(dev.iter().map(Vec::as_slice), Prefix::None)
    };
    let dev_opt: Option<&mut DevFn<'_, AdapterSet<S>>> =
        if dev.is_empty() { None } else { Some(&mut dev_fn) };
    fit(initial, &train, &job.hyper, 0.0, &mut grads_for, dev_opt)
}

/// Runs `train` once per learning rate and keeps the run with the lowest
/// best dev perplexity (ties keep the earlier rate).
pub fn select_by_dev<R>(
    lrs: &[f64],
    mut train: impl FnMut(f64) -> Result<R>,
    dev_perplexity: impl Fn(&R) -> Option<f64>,
) -> Result<(f64, R)> {
    let mut best: Option<(f64, f64, R)> = None;
    for &lr in lrs {
        let run = train(lr)?;
        let ppl = dev_perplexity(&run).unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|(b, _, _)| ppl < *b) {
            best = Some((ppl, lr, run));
        }
    }
    best.map(|(_, lr, r)| (lr, r))
        .ok_or(Error::Config("empty learning-rate grid".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gpt2(vocab: usize) -> ModelConfig {
        ModelConfig {
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            d_ff: 3072,
            vocab_size: vocab,
            max_positions: 1024,
            dropout: 0.1,
            seed: 0,
            prompt_positions: true,
        }
    }

    #[test]
    fn table_counts_at_gpt2_width() {
        let c = gpt2(50257);
        let prompt = |k| Method::Prompt {
            k,
            init: PromptInit::Vocab,
        };
        assert_eq!(count_trainable(&prompt(50), &c), 38_400);
        assert_eq!(count_trainable(&prompt(10), &c), 7_680);
        assert_eq!(count_trainable(&prompt(1), &c), 768);
        assert_eq!(count_trainable(&prompt(200), &c), 153_600);
        assert_eq!(count_trainable(&Method::DomainEmbedding, &c), 768);
        assert_eq!(count_trainable(&Method::Embedding, &c), 38_597_376);
        assert_eq!(count_trainable(&Method::FixedPrompt { words: 20 }, &c), 0);
        assert_eq!(count_trainable(&Method::NoAdaptation, &c), 0);
        assert_eq!(count_trainable(&Method::Full, &c), c.param_count());
    }

    #[test]
    fn adapter_count_closed_form() {
        let c = gpt2(50257);
        // bottleneck round(768/16) = 48: per layer 2*768 + 768*48 + 48 + 48*768 + 768
        let per_layer = 1536 + 36_864 + 48 + 36_864 + 768;
        assert_eq!(
            count_trainable(&Method::Adapter { reduction_factor: 16 }, &c),
            12 * per_layer
        );
    }

    #[test]
    fn method_parsing() {
        assert_eq!(
            Method::parse("prompt:50").unwrap(),
            Method::Prompt {
                k: 50,
                init: PromptInit::Vocab
            }
        );
        assert_eq!(
            Method::parse("prompt:5:random").unwrap(),
            Method::Prompt {
                k: 5,
                init: PromptInit::Random
            }
        );
        assert_eq!(
            Method::parse("fixed-prompt").unwrap(),
            Method::FixedPrompt { words: 20 }
        );
        assert_eq!(
            Method::parse("adapter:8").unwrap(),
            Method::Adapter { reduction_factor: 8 }
        );
        assert!(matches!(Method::parse("lstm"), Err(Error::UnknownMethod(_))));
        assert!(Method::parse("prompt").is_err());
    }

    #[test]
    fn lr_selection_prefers_lowest_dev() {
        let (lr, run) = select_by_dev(&[0.1, 0.01, 0.001], Ok, |&lr| {
            Some(if lr == 0.01 { 1.0 } else { 2.0 })
        })
        .unwrap();
        assert_eq!(lr, 0.01);
        assert_eq!(run, 0.01);
    }
}
