use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptation::adapter::{adapter_key, AdapterSet};
use crate::error::{Error, Result};
use crate::model::cache::PrefixCache;
use crate::model::params::{
    block_key, Fingerprint, Parameters, FINAL_NORM_BIAS, FINAL_NORM_GAIN, POSITION_EMBEDDING,
    TOKEN_EMBEDDING,
};
use crate::model::ModelConfig;
use crate::numerics::{ops, Graph, Matrix, NodeId, ParamKey, Scalar};
use crate::tokenizer::BOS_ID;

/// What, if anything, is prepended to a sequence before BOS.
#[derive(Debug, Clone, Copy)]
pub enum Prefix<'p, S> {
    None,
    /// Raw `k × d` prompt embeddings, propagated through every layer.
    Rows(&'p Matrix<S>),
    /// Precomputed per-layer key/value state of a prompt.
    Cached(&'p PrefixCache<S>),
}

impl<S> Prefix<'_, S> {
    pub fn len(&self) -> usize
    where
        S: Scalar,
    {
        match self {
            Prefix::None => 0,
            Prefix::Rows(m) => m.rows(),
            Prefix::Cached(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool
    where
        S: Scalar,
    {
        self.len() == 0
    }
}

/// Total log-probability and perplexity of one token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScore {
    pub total_logprob: f64,
    pub perplexity: f64,
    pub token_logprobs: Vec<f64>,
}

impl SequenceScore {
    pub fn tokens(&self) -> usize {
        self.token_logprobs.len()
    }

    /// The prompt-tuning objective for this sequence: `-Σ log p(x_t | …)`.
    pub fn loss(&self) -> f64 {
        -self.total_logprob
    }
}

pub(crate) enum PrefixNode<'a, S: Scalar> {
    None,
    Rows(NodeId),
    Cached(&'a PrefixCache<S>),
}

/// Dropout mask source, active only while pretraining or fully fine-tuning.
pub(crate) struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub(crate) fn new(rate: f64, seed: u64) -> Option<Self> {
        (rate > 0.0).then(|| Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn apply<'a, S: Scalar>(&mut self, g: &mut Graph<'a, S>, x: NodeId) -> Result<NodeId> {
        let (r, c) = g.value(x).shape();
        let keep = S::from_f64_lossy(1.0 / (1.0 - self.rate));
        let mask = Matrix::from_fn(r, c, |_, _| {
            if self.rng.random::<f64>() < self.rate {
                S::zero()
            } else {
                keep
            }
        });
        g.mask_mul(x, mask)
    }
}

/// Records the network into a graph, registering each parameter leaf once.
pub(crate) struct Net<'a, S: Scalar> {
    pub config: &'a ModelConfig,
    pub params: &'a Parameters<S>,
    pub adapters: Option<&'a AdapterSet<S>>,
    leaves: HashMap<ParamKey, NodeId>,
}

impl<'a, S: Scalar> Net<'a, S> {
    pub(crate) fn new(
        config: &'a ModelConfig,
        params: &'a Parameters<S>,
        adapters: Option<&'a AdapterSet<S>>,
    ) -> Self {
        Self {
            config,
            params,
            adapters,
            leaves: HashMap::new(),
        }
    }

    fn leaf(&mut self, g: &mut Graph<'a, S>, key: ParamKey, value: &'a Matrix<S>) -> NodeId {
        *self.leaves.entry(key).or_insert_with(|| g.param(value, key))
    }

    fn embedding(&mut self, g: &mut Graph<'a, S>) -> NodeId {
        self.leaf(g, TOKEN_EMBEDDING, &self.params.token_embedding)
    }

    fn positions(
        &mut self,
        g: &mut Graph<'a, S>,
        start: usize,
        count: usize,
    ) -> Result<NodeId> {
        let table = self.leaf(g, POSITION_EMBEDDING, &self.params.position_embedding);
        let ids: Vec<usize> = (start..start + count).collect();
        g.gather(table, &ids)
    }

    /// Final-normed hidden states for `inputs`. Returns the node and the row
    /// at which the input rows start (prompt rows precede them when the
    /// prefix is not cached).
    pub(crate) fn hidden(
        &mut self,
        g: &mut Graph<'a, S>,
        prefix: &PrefixNode<'a, S>,
        inputs: &[usize],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<(NodeId, usize)> {
        let cfg = self.config;
        let d = cfg.d_model;
        let k = match prefix {
            PrefixNode::None => 0,
            PrefixNode::Rows(id) => {
                let m = g.value(*id);
                if m.cols() != d {
                    return Err(Error::shape(format!("prompt has {} columns, model d = {d}", m.cols())));
                }
                m.rows()
            }
            PrefixNode::Cached(c) => {
                if c.layers() != cfg.n_layers || c.width() != d {
                    return Err(Error::shape("prefix cache does not match the model shape"));
                }
                c.len()
            }
        };
        let needed = cfg.positions_needed(k, inputs.len().saturating_sub(1));
        if needed > cfg.max_positions {
            return Err(Error::SequenceTooLong {
                needed,
                max: cfg.max_positions,
            });
        }

        let table = self.embedding(g);
        let tok = g.gather(table, inputs)?;
        let tok_start = if cfg.prompt_positions { k } else { 0 };
        let (mut x, start) = match prefix {
            PrefixNode::Rows(p) if k > 0 => {
                if cfg.prompt_positions {
                    let joined = g.concat_rows(&[*p, tok])?;
                    let pos = self.positions(g, 0, k + inputs.len())?;
                    (g.add(joined, pos)?, k)
                } else {
                    let pos = self.positions(g, 0, inputs.len())?;
                    let tok = g.add(tok, pos)?;
                    (g.concat_rows(&[*p, tok])?, k)
                }
            }
            _ => {
                let pos = self.positions(g, tok_start, inputs.len())?;
                (g.add(tok, pos)?, 0)
            }
        };
        if let Some(dr) = dropout.as_deref_mut() {
            x = dr.apply(g, x)?;
        }

        // Cached prompts keep their keys/values out of the query rows.
        let cached = match prefix {
            PrefixNode::Cached(c) if k > 0 => Some(*c),
            _ => None,
        };
        let n_prefix = k;
        let q_offset = if cached.is_some() { k } else { 0 };

        for layer in 0..cfg.n_layers {
            let (out, _, _) = self.block(g, layer, x, n_prefix, q_offset, cached, dropout.as_deref_mut())?;
            x = out;
        }
        let gain = self.leaf(g, FINAL_NORM_GAIN, &self.params.final_norm_gain);
        let bias = self.leaf(g, FINAL_NORM_BIAS, &self.params.final_norm_bias);
        Ok((g.layer_norm(x, gain, bias)?, start))
    }

    /// One block; also returns this block's key and value nodes for `x`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn block(
        &mut self,
        g: &mut Graph<'a, S>,
        layer: usize,
        x: NodeId,
        n_prefix: usize,
        q_offset: usize,
        cached: Option<&'a PrefixCache<S>>,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        let d = self.config.d_model;
        let b = &self.params.blocks[layer];
        let key = |i| block_key(layer, i);
        let t = b.tensors();
        let ln1g = self.leaf(g, key(0), t[0]);
        let ln1b = self.leaf(g, key(1), t[1]);
        let wqkv = self.leaf(g, key(2), t[2]);
        let bqkv = self.leaf(g, key(3), t[3]);
        let wo = self.leaf(g, key(4), t[4]);
        let bo = self.leaf(g, key(5), t[5]);
        let ln2g = self.leaf(g, key(6), t[6]);
        let ln2b = self.leaf(g, key(7), t[7]);
        let win = self.leaf(g, key(8), t[8]);
        let bin = self.leaf(g, key(9), t[9]);
        let wout = self.leaf(g, key(10), t[10]);
        let bout = self.leaf(g, key(11), t[11]);

        let h = g.layer_norm(x, ln1g, ln1b)?;
        let qkv = g.matmul(h, wqkv)?;
        let qkv = g.add_row(qkv, bqkv)?;
        let q = g.slice_cols(qkv, 0, d)?;
        let k_new = g.slice_cols(qkv, d, 2 * d)?;
        let v_new = g.slice_cols(qkv, 2 * d, 3 * d)?;
        let (k_all, v_all) = match cached {
            Some(c) => {
                let ck = g.constant(&c.keys[layer]);
                let cv = g.constant(&c.values[layer]);
                (g.concat_rows(&[ck, k_new])?, g.concat_rows(&[cv, v_new])?)
            }
            None => (k_new, v_new),
        };
        let att = g.attention(q, k_all, v_all, self.config.n_heads, n_prefix, q_offset)?;
        let mut att = g.matmul(att, wo)?;
        att = g.add_row(att, bo)?;
        if let Some(dr) = dropout.as_deref_mut() {
            att = dr.apply(g, att)?;
        }
        let x = g.add(x, att)?;

        let h = g.layer_norm(x, ln2g, ln2b)?;
        let f = g.matmul(h, win)?;
        let f = g.add_row(f, bin)?;
        let f = g.gelu(f);
        let f = g.matmul(f, wout)?;
        let mut f = g.add_row(f, bout)?;
        if let Some(dr) = dropout {
            f = dr.apply(g, f)?;
        }
        let mut x = g.add(x, f)?;

        if let Some(adapters) = self.adapters {
            let a = &adapters.layers[layer];
            let t = a.tensors();
            let ng = self.leaf(g, adapter_key(layer, 0), t[0]);
            let nb = self.leaf(g, adapter_key(layer, 1), t[1]);
            let dw = self.leaf(g, adapter_key(layer, 2), t[2]);
            let db = self.leaf(g, adapter_key(layer, 3), t[3]);
            let uw = self.leaf(g, adapter_key(layer, 4), t[4]);
            let ub = self.leaf(g, adapter_key(layer, 5), t[5]);
            let h = g.layer_norm(x, ng, nb)?;
            let h = g.matmul(h, dw)?;
            let h = g.add_row(h, db)?;
            let h = g.gelu(h);
            let h = g.matmul(h, uw)?;
            let h = g.add_row(h, ub)?;
            x = g.add(x, h)?;
        }
        Ok((x, k_new, v_new))
    }

    /// Summed next-token loss of `tokens`; prompt and BOS rows are never targets.
    pub(crate) fn sequence_loss(
        &mut self,
        g: &mut Graph<'a, S>,
        prefix: &PrefixNode<'a, S>,
        tokens: &[usize],
        dropout: Option<&mut Dropout>,
    ) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        let inputs = bos_inputs(tokens);
        let (hidden, start) = self.hidden(g, prefix, &inputs, dropout)?;
        let rows = g.slice_rows(hidden, start, start + inputs.len())?;
        let emb = self.embedding(g);
        let logits = g.matmul_nt(rows, emb)?;
        let targets: Vec<Option<usize>> = tokens.iter().map(|&t| Some(t)).collect();
        g.cross_entropy(logits, &targets)
    }

    /// Logits for every input row (`inputs` already starts with BOS).
    pub(crate) fn logits(
        &mut self,
        g: &mut Graph<'a, S>,
        prefix: &PrefixNode<'a, S>,
        inputs: &[usize],
    ) -> Result<NodeId> {
        let (hidden, start) = self.hidden(g, prefix, inputs, None)?;
        let rows = g.slice_rows(hidden, start, start + inputs.len())?;
        let emb = self.embedding(g);
        g.matmul_nt(rows, emb)
    }
}

/// `[BOS, x_1, …, x_{T-1}]`: the inputs whose next-token rows predict `x_1..x_T`.
pub(crate) fn bos_inputs(tokens: &[usize]) -> Vec<usize> {
    let mut inputs = Vec::with_capacity(tokens.len());
    inputs.push(BOS_ID);
    inputs.extend_from_slice(&tokens[..tokens.len().saturating_sub(1)]);
    inputs
}

/// A backbone (plus optional adapters) frozen for scoring.
#[derive(Debug, Clone)]
pub struct LanguageModel<S: Scalar> {
    config: ModelConfig,
    params: Parameters<S>,
    adapters: Option<AdapterSet<S>>,
    fingerprint: Fingerprint,
    adapter_fingerprint: Option<Fingerprint>,
}

impl<S: Scalar> LanguageModel<S> {
    pub fn new(config: ModelConfig, params: Parameters<S>) -> Result<Self> {
        config.validate()?;
        check_shapes(&config, &params)?;
        let fingerprint = params.fingerprint();
        Ok(Self {
            config,
            params,
            adapters: None,
            fingerprint,
            adapter_fingerprint: None,
        })
    }

    /// Freshly initialized model.
    pub fn init(config: ModelConfig) -> Result<Self> {
        let params = Parameters::init(&config)?;
        Self::new(config, params)
    }

    pub fn with_adapters(mut self, adapters: AdapterSet<S>) -> Result<Self> {
        if adapters.layers.len() != self.config.n_layers
            || adapters
                .layers
                .first()
                .is_some_and(|l| l.down_weight.rows() != self.config.d_model)
        {
            return Err(Error::shape("adapter set does not match the model"));
        }
        self.adapter_fingerprint = Some(adapters.fingerprint());
        self.adapters = Some(adapters);
        Ok(self)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters<S> {
        &self.params
    }

    pub fn adapters(&self) -> Option<&AdapterSet<S>> {
        self.adapters.as_ref()
    }

    pub fn into_params(self) -> Parameters<S> {
        self.params
    }

    /// SHA-256 of the backbone parameter blob.
    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn adapter_fingerprint(&self) -> Option<&Fingerprint> {
        self.adapter_fingerprint.as_ref()
    }

    pub(crate) fn net(&self) -> Net<'_, S> {
        Net::new(&self.config, &self.params, self.adapters.as_ref())
    }

    fn check_cache(&self, cache: &PrefixCache<S>) -> Result<()> {
        if cache.fingerprint() != &self.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.fingerprint.to_string(),
                found: cache.fingerprint().to_string(),
            });
        }
        if cache.adapter_fingerprint() != self.adapter_fingerprint.as_ref() {
            return Err(Error::FingerprintMismatch {
                expected: format!("{:?}", self.adapter_fingerprint),
                found: format!("{:?}", cache.adapter_fingerprint()),
            });
        }
        Ok(())
    }

    fn logit_rows(&self, inputs: &[usize], prefix: Prefix<'_, S>) -> Result<Matrix<S>> {
        let mut g = Graph::inference();
        let mut net = self.net();
        let node = match prefix {
            Prefix::Rows(m) if m.rows() > 0 => {
                let p = g.constant(m);
                net.logits(&mut g, &PrefixNode::Rows(p), inputs)?
            }
            Prefix::Cached(c) => {
                self.check_cache(c)?;
                net.logits(&mut g, &PrefixNode::Cached(c), inputs)?
            }
            _ => net.logits(&mut g, &PrefixNode::None, inputs)?,
        };
        Ok(g.value(node).clone())
    }

    /// Next-token log-probabilities: row `t` is the distribution over `x_t`
    /// given the prefix, BOS and `x_1..x_{t-1}`.
    pub fn forward(&self, tokens: &[usize], prefix: Prefix<'_, S>) -> Result<Matrix<S>> {
        if tokens.is_empty() {
            let needed = self.config.positions_needed(prefix.len(), 0);
            if needed > self.config.max_positions {
                return Err(Error::SequenceTooLong {
                    needed,
                    max: self.config.max_positions,
                });
            }
            return Ok(Matrix::zeros(0, self.config.vocab_size));
        }
        let logits = self.logit_rows(&bos_inputs(tokens), prefix)?;
        Ok(ops::log_softmax_rows(&logits))
    }

    /// Log-probabilities of the token following `context` (BOS is prepended).
    pub fn next_token_logprobs(&self, context: &[usize], prefix: Prefix<'_, S>) -> Result<Vec<S>> {
        let mut inputs = Vec::with_capacity(context.len() + 1);
        inputs.push(BOS_ID);
        inputs.extend_from_slice(context);
        let logits = self.logit_rows(&inputs, prefix)?;
        let mut last = logits.row(logits.rows() - 1).to_vec();
        ops::log_softmax_in_place(&mut last);
        Ok(last)
    }

    pub fn sequence_score(&self, tokens: &[usize], prefix: Prefix<'_, S>) -> Result<SequenceScore> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        let logp = self.forward(tokens, prefix)?;
        let token_logprobs: Vec<f64> = tokens
            .iter()
            .enumerate()
            .map(|(t, &x)| logp[(t, x)].as_f64())
            .collect();
        let total: f64 = token_logprobs.iter().sum();
        Ok(SequenceScore {
            total_logprob: total,
            perplexity: (-total / tokens.len() as f64).exp(),
            token_logprobs,
        })
    }

    /// Corpus perplexity: `exp(-Σ log p / Σ T)` over non-empty sequences.
    pub fn corpus_perplexity<'t>(
        &self,
        corpus: impl IntoIterator<Item = &'t [usize]>,
        prefix: Prefix<'_, S>,
    ) -> Result<f64> {
        let (mut total, mut count) = (0.0, 0usize);
        for seq in corpus {
            if seq.is_empty() {
                continue;
            }
            total += self.sequence_score(seq, prefix)?.total_logprob;
            count += seq.len();
        }
        if count == 0 {
            return Err(Error::Empty("corpus"));
        }
        Ok((-total / count as f64).exp())
    }
}

fn check_shapes<S: Scalar>(config: &ModelConfig, params: &Parameters<S>) -> Result<()> {
    let d = config.d_model;
    let ok = params.token_embedding.shape() == (config.vocab_size, d)
        && params.position_embedding.shape() == (config.max_positions, d)
        && params.blocks.len() == config.n_layers
        && params.blocks.iter().all(|b| {
            b.qkv_weight.shape() == (d, 3 * d) && b.ffn_in_weight.shape() == (d, config.d_ff)
        })
        && params.final_norm_gain.shape() == (1, d);
    if !ok {
        return Err(Error::shape("parameters do not match the model configuration"));
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters"));
    }
    Ok(())
}
