use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation::adapter::AdapterSet;
use crate::error::{Error, Result};
use crate::model::forward::{Dropout, Net, PrefixNode};
use crate::model::{LanguageModel, Parameters};
use crate::numerics::{Gradients, Graph, Matrix, ParamKey, Scalar};
use crate::tokenizer::{TokenSequence, Tokenizer};

/// Optimization settings shared by every training routine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    /// Gradients are accumulated over whole sentences until at least this
    /// many target tokens have been seen, then one optimizer step is taken.
    pub batch_tokens: usize,
    /// Stop after this many epochs without a dev-perplexity improvement.
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 10,
            batch_tokens: 256,
            patience: Some(3),
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.lr)));
        }
        if self.batch_tokens == 0 {
            return Err(Error::Config("batch_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss and model-selection history of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean per-token loss of every optimizer step.
    pub step_losses: Vec<f64>,
    /// Summed loss over the training set, per epoch.
    pub epoch_losses: Vec<f64>,
    /// Dev perplexity before training (index 0) and after each epoch.
    pub dev_perplexity: Vec<f64>,
    /// Epoch whose state was returned (0 = untrained).
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn best_dev_perplexity(&self) -> Option<f64> {
        self.dev_perplexity.get(self.best_epoch).copied()
    }

    pub fn steps(&self) -> usize {
        self.step_losses.len()
    }
}

/// Something holding trainable tensors addressable by key.
pub(crate) trait TrainState<S: Scalar>: Clone {
    fn tensor_mut(&mut self, key: ParamKey) -> Option<&mut Matrix<S>>;
}

impl<S: Scalar> TrainState<S> for Parameters<S> {
    fn tensor_mut(&mut self, key: ParamKey) -> Option<&mut Matrix<S>> {
        Parameters::tensor_mut(self, key)
    }
}

impl<S: Scalar> TrainState<S> for AdapterSet<S> {
    fn tensor_mut(&mut self, key: ParamKey) -> Option<&mut Matrix<S>> {
        AdapterSet::tensor_mut(self, key)
    }
}

/// A single tensor (a prompt) under its own key.
#[derive(Debug, Clone)]
pub(crate) struct KeyedTensor<S> {
    pub key: ParamKey,
    pub value: Matrix<S>,
}

impl<S: Scalar> TrainState<S> for KeyedTensor<S> {
    fn tensor_mut(&mut self, key: ParamKey) -> Option<&mut Matrix<S>> {
        (key == self.key).then_some(&mut self.value)
    }
}

/// Adam with β = (0.9, 0.999) and ε = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    first: BTreeMap<ParamKey, Matrix<S>>,
    second: BTreeMap<ParamKey, Matrix<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub(crate) fn step<St: TrainState<S>>(&mut self, state: &mut St, grads: &Gradients<S>) -> Result<()> {
        self.step += 1;
        let b1 = S::from_f64_lossy(self.beta1);
        let b2 = S::from_f64_lossy(self.beta2);
        let one = S::one();
        let c1 = S::from_f64_lossy(1.0 - self.beta1.powi(self.step));
        let c2 = S::from_f64_lossy(1.0 - self.beta2.powi(self.step));
        let lr = S::from_f64_lossy(self.lr);
        let eps = S::from_f64_lossy(self.eps);
        for (key, g) in grads.iter() {
            let param = state
                .tensor_mut(key)
                .ok_or_else(|| Error::Graph(format!("optimizer has no tensor for {key:?}")))?;
            let (r, c) = g.shape();
            let m = self.first.entry(key).or_insert_with(|| Matrix::zeros(r, c));
            let v = self.second.entry(key).or_insert_with(|| Matrix::zeros(r, c));
            for (((p, &gi), mi), vi) in param
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

const ORDER_STREAM: u64 = 0x6f_7264_6572;
const DROPOUT_STREAM: u64 = 0x6472_6f70;

/// Per-sentence loss and gradients for the current state.
pub(crate) type GradFn<'f, S, St> =
    dyn FnMut(&St, &[usize], Option<&mut Dropout>) -> Result<(f64, Gradients<S>)> + 'f;

/// Dev perplexity of the current state.
pub(crate) type DevFn<'f, St> = dyn FnMut(&St) -> Result<f64> + 'f;

/// Shared epoch loop: shuffled sentence order, token-budget gradient
/// accumulation, Adam, and (when a dev metric is given) early stopping that
/// returns the state with the lowest dev perplexity.
pub(crate) fn fit<S: Scalar, St: TrainState<S>>(
    initial: St,
    train: &[Vec<usize>],
    hyper: &TrainHyper,
    dropout_rate: f64,
    grads_for: &mut GradFn<'_, S, St>,
    mut dev: Option<&mut DevFn<'_, St>>,
) -> Result<(St, TrainLog)> {
    hyper.validate()?;
    let train: Vec<&Vec<usize>> = train.iter().filter(|s| !s.is_empty()).collect();
    if train.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mut state = initial;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, St)> = None;
    if let Some(dev) = dev.as_deref_mut() {
        let ppl = dev(&state)?;
        log.dev_perplexity.push(ppl);
        best = Some((ppl, state.clone()));
    }

    let mut order_rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ ORDER_STREAM);
    let mut dropout = Dropout::new(dropout_rate, hyper.seed ^ DROPOUT_STREAM);
    let mut adam = Adam::new(hyper.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut since_best = 0;

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        let mut batch: Option<Gradients<S>> = None;
        let (mut batch_loss, mut batch_tokens) = (0.0, 0usize);
        for (i, &idx) in order.iter().enumerate() {
            let seq = train[idx];
            let (loss, grads) = grads_for(&state, seq, dropout.as_mut())?;
            epoch_loss += loss;
            batch_loss += loss;
            batch_tokens += seq.len();
            match &mut batch {
                Some(acc) => acc.accumulate(&grads),
                None => batch = Some(grads),
            }
            if batch_tokens >= hyper.batch_tokens || i + 1 == order.len() {
                let mut grads = batch.take().expect("batch has at least one sentence");
                grads.scale(S::from_f64_lossy(1.0 / batch_tokens as f64));
                adam.step(&mut state, &grads)?;
                log.step_losses.push(batch_loss / batch_tokens as f64);
                batch_loss = 0.0;
                batch_tokens = 0;
            }
        }
        log.epoch_losses.push(epoch_loss);

        if let Some(dev) = dev.as_deref_mut() {
            let ppl = dev(&state)?;
            log.dev_perplexity.push(ppl);
            let improved = best.as_ref().is_none_or(|(b, _)| ppl < *b);
            if improved {
                best = Some((ppl, state.clone()));
                log.best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if hyper.patience.is_some_and(|p| since_best >= p) {
                    break;
                }
            }
        }
    }
    match best {
        Some((_, best_state)) => Ok((best_state, log)),
        None => {
            log.best_epoch = log.epoch_losses.len();
            Ok((state, log))
        }
    }
}

/// Encodes lines, dropping empty ones and truncating to `max_tokens`.
pub fn encode_corpus<T: Tokenizer, L: AsRef<str>>(
    tokenizer: &T,
    lines: &[L],
    max_tokens: usize,
) -> Vec<Vec<usize>> {
    lines
        .iter()
        .map(|l| {
            let TokenSequence { mut ids, .. } = tokenizer.encode(l.as_ref());
            ids.truncate(max_tokens);
            ids
        })
        .filter(|ids| !ids.is_empty())
        .collect()
}

/// Trains every backbone parameter on generic text.
pub fn pretrain<S: Scalar>(
    model: &LanguageModel<S>,
    corpus: &[Vec<usize>],
    hyper: &TrainHyper,
) -> Result<(LanguageModel<S>, TrainLog)> {
    let config = model.config().clone();
    let max = config.max_positions.saturating_sub(1);
    let corpus: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s[..s.len().min(max)].to_vec())
        .collect();
    let keys = model.params().keys();
    let mut grads_for = |params: &Parameters<S>, seq: &[usize], dropout: Option<&mut Dropout>| {
        full_sequence_grads(&config, params, &keys, seq, dropout)
    };
    let (params, log) = fit(
        model.params().clone(),
        &corpus,
        hyper,
        config.dropout,
        &mut grads_for,
        None,
    )?;
    Ok((LanguageModel::new(config, params)?, log))
}

/// Loss and gradients for the backbone tensors in `trainable`.
pub(crate) fn full_sequence_grads<S: Scalar>(
    config: &crate::model::ModelConfig,
    params: &Parameters<S>,
    trainable: &[ParamKey],
    seq: &[usize],
    dropout: Option<&mut Dropout>,
) -> Result<(f64, Gradients<S>)> {
    let mut g = Graph::new(trainable.iter().copied());
    let mut net = Net::new(config, params, None);
    let loss = net.sequence_loss(&mut g, &PrefixNode::None, seq, dropout)?;
    let value = g.value(loss).data()[0].as_f64();
    Ok((value, g.backward(loss)?))
}
