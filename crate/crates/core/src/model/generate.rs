use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LanguageModel, Prefix};
use crate::numerics::Scalar;
use crate::tokenizer::{Tokenizer, RESERVED};

/// How the next token is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum DecodeMode {
    Greedy,
    /// Sample among the `k` most likely tokens after dividing logits by
    /// `temperature`.
    TopK { k: usize, temperature: f64, seed: u64 },
}

impl<S: Scalar> LanguageModel<S> {
    /// Continues `seed_text` by up to `max_new` words. Reserved tokens are
    /// never produced; generation also stops when positions run out.
    pub fn generate<T: Tokenizer>(
        &self,
        tokenizer: &T,
        prefix: Prefix<'_, S>,
        seed_text: &str,
        max_new: usize,
        mode: &DecodeMode,
    ) -> Result<String> {
        let seed = tokenizer.encode(seed_text).ids;
        if seed.is_empty() {
            return Err(Error::Empty("generation seed"));
        }
        let k = prefix.len();
        let needed = self.config().positions_needed(k, seed.len());
        if needed > self.config().max_positions {
            return Err(Error::SequenceTooLong {
                needed,
                max: self.config().max_positions,
            });
        }
        let mut rng = match mode {
            DecodeMode::TopK { k, temperature, seed } => {
                if *k == 0 || temperature.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                    return Err(Error::Config(
                        "top-k sampling needs k >= 1 and temperature > 0".into(),
                    ));
                }
                Some(ChaCha8Rng::seed_from_u64(*seed))
            }
            DecodeMode::Greedy => None,
        };

        let mut context = seed;
        let mut generated = Vec::new();
        while generated.len() < max_new
            && self.config().positions_needed(k, context.len() + 1) <= self.config().max_positions
        {
            let logp = self.next_token_logprobs(&context, prefix)?;
            let mut candidates: Vec<(usize, f64)> = logp
                .iter()
                .enumerate()
                .skip(RESERVED)
                .map(|(i, v)| (i, v.as_f64()))
                .collect();
            if candidates.is_empty() {
                break;
            }
            // Stable sort keeps the lowest id first among equal scores.
            candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
            let next = match (mode, rng.as_mut()) {
                (DecodeMode::TopK { k, temperature, .. }, Some(rng)) => {
                    candidates.truncate(*k);
                    let top = candidates[0].1;
                    let weights: Vec<f64> = candidates
                        .iter()
                        .map(|(_, lp)| ((lp - top) / temperature).exp())
                        .collect();
                    let dist = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
                    candidates[dist.sample(rng)].0
                }
                _ => candidates[0].0,
            };
            context.push(next);
            generated.push(next);
        }
        if generated.is_empty() {
            return Ok(seed_text.to_string());
        }
        Ok(format!("{} {}", seed_text, tokenizer.decode(&generated)?))
    }
}
