use crate::error::Result;
use crate::model::{LanguageModel, Prefix, PrefixCache};
use crate::numerics::{Matrix, Scalar};
use crate::tokenizer::Tokenizer;

/// A second-pass language model: text to a log-probability (higher is
/// more likely). Shared read-only across rescoring workers.
pub trait Scorer: Sync {
    fn lm_logprob(&self, text: &str) -> Result<f64>;
}

impl<F> Scorer for F
where
    F: Fn(&str) -> Result<f64> + Sync,
{
    fn lm_logprob(&self, text: &str) -> Result<f64> {
        self(text)
    }
}

/// The prefix a [`ModelScorer`] puts in front of every hypothesis.
#[derive(Debug, Clone)]
pub enum ScorerPrefix<S> {
    None,
    Rows(Matrix<S>),
    Cached(PrefixCache<S>),
}

/// Scores text with a language model, optionally behind a domain prompt.
///
/// Text is lowercased and mapped through the model's vocabulary; unknown
/// words are scored as UNK. Empty text scores 0 (no prediction terms).
pub struct ModelScorer<'a, S: Scalar, T> {
    model: &'a LanguageModel<S>,
    tokenizer: &'a T,
    prefix: ScorerPrefix<S>,
    per_token: bool,
}

impl<'a, S: Scalar, T: Tokenizer + Sync> ModelScorer<'a, S, T> {
    pub fn new(model: &'a LanguageModel<S>, tokenizer: &'a T) -> Self {
        Self {
            model,
            tokenizer,
            prefix: ScorerPrefix::None,
            per_token: false,
        }
    }

    pub fn with_prefix(mut self, prefix: ScorerPrefix<S>) -> Self {
        self.prefix = prefix;
        self
    }

    /// Divide the summed log-probability by the token count.
    pub fn per_token(mut self, yes: bool) -> Self {
        self.per_token = yes;
        self
    }

    fn prefix(&self) -> Prefix<'_, S> {
        match &self.prefix {
            ScorerPrefix::None => Prefix::None,
            ScorerPrefix::Rows(m) => Prefix::Rows(m),
            ScorerPrefix::Cached(c) => Prefix::Cached(c),
        }
    }
}

impl<S: Scalar, T: Tokenizer + Sync> Scorer for ModelScorer<'_, S, T> {
    fn lm_logprob(&self, text: &str) -> Result<f64> {
        let ids = self.tokenizer.encode(text).ids;
        if ids.is_empty() {
            return Ok(0.0);
        }
        let score = self.model.sequence_score(&ids, self.prefix())?;
        Ok(if self.per_token {
            score.total_logprob / ids.len() as f64
        } else {
            score.total_logprob
        })
    }
}
