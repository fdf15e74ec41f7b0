//! Domain prompts and the `.dpmt` file format.
//!
//! A `.dpmt` file is the line `DPMT1`, one line of JSON header
//! (`domain`, `k`, `d`, `base_fingerprint`, `init`, `seed`, `steps`,
//! `dev_perplexity`), then `k × d` little-endian `f32` values, row-major.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{normal_matrix, read_f32, write_f32, INIT_STD};
use crate::model::{Fingerprint, LanguageModel, PrefixCache};
use crate::numerics::{Matrix, ParamKey, Scalar};
use crate::tokenizer::{top_k_frequent, Tokenizer, UNK_ID};

/// Gradient key of the prompt matrix.
pub const PROMPT_KEY: ParamKey = ParamKey(1 << 24);

const MAGIC: &str = "DPMT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PromptInit {
    /// Embeddings of the `k` most frequent domain words.
    #[default]
    Vocab,
    /// `N(0, 0.02²)`.
    Random,
}

impl std::str::FromStr for PromptInit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "vocab" => Ok(PromptInit::Vocab),
            "random" => Ok(PromptInit::Random),
            other => Err(format!("unknown prompt init `{other}` (vocab | random)")),
        }
    }
}

/// `k` trainable embedding rows bound to one domain and one base model.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPrompt<S> {
    pub domain: String,
    pub matrix: Matrix<S>,
    pub init: PromptInit,
    pub seed: u64,
    pub base_fingerprint: Fingerprint,
    pub steps: usize,
    pub dev_perplexity: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    domain: String,
    k: usize,
    d: usize,
    base_fingerprint: Fingerprint,
    init: PromptInit,
    seed: u64,
    #[serde(default)]
    steps: usize,
    #[serde(default)]
    dev_perplexity: Option<f64>,
}

impl<S: Scalar> DomainPrompt<S> {
    pub fn k(&self) -> usize {
        self.matrix.rows()
    }

    pub fn d(&self) -> usize {
        self.matrix.cols()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            domain: self.domain.clone(),
            k: self.k(),
            d: self.d(),
            base_fingerprint: self.base_fingerprint.clone(),
            init: self.init,
            seed: self.seed,
            steps: self.steps,
            dev_perplexity: self.dev_perplexity,
        };
        let mut out = format!("{MAGIC}\n{}\n", serde_json::to_string(&header)?).into_bytes();
        write_f32(&mut out, &self.matrix);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |message: &str| Error::Format {
            what: "prompt file",
            message: message.to_string(),
        };
        let first = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing magic line"))?;
        if &bytes[..first] != MAGIC.as_bytes() {
            return Err(bad("bad magic"));
        }
        let rest = &bytes[first + 1..];
        let second = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line"))?;
        let header: Header = serde_json::from_slice(&rest[..second])?;
        let body = &rest[second + 1..];
        if body.len() != header.k * header.d * 4 {
            return Err(bad(&format!(
                "{} payload bytes for a {}x{} matrix",
                body.len(),
                header.k,
                header.d
            )));
        }
        let mut matrix = Matrix::zeros(header.k, header.d);
        read_f32(body, &mut matrix);
        if !matrix.is_finite() {
            return Err(Error::NonFinite("prompt matrix"));
        }
        Ok(Self {
            domain: header.domain,
            matrix,
            init: header.init,
            seed: header.seed,
            base_fingerprint: header.base_fingerprint,
            steps: header.steps,
            dev_perplexity: header.dev_perplexity,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// An untrained prompt for `domain`.
///
/// `Vocab` copies the embedding rows of the `k` most frequent words of
/// `corpus` (cycling when it has fewer distinct words; out-of-vocabulary
/// words take the UNK row). `Random` draws `N(0, 0.02²)` from `seed`.
pub fn init_prompt<S: Scalar, T: Tokenizer, L: AsRef<str>>(
    domain: &str,
    mode: PromptInit,
    k: usize,
    model: &LanguageModel<S>,
    tokenizer: &T,
    corpus: &[L],
    seed: u64,
) -> Result<DomainPrompt<S>> {
    if k == 0 {
        return Err(Error::Config("prompt length k must be at least 1".into()));
    }
    let d = model.config().d_model;
    let matrix = match mode {
        PromptInit::Vocab => {
            let words = top_k_frequent(corpus, k)?;
            let table = &model.params().token_embedding;
            let mut m = Matrix::zeros(k, d);
            for (r, w) in words.iter().enumerate() {
                let id = tokenizer.token_id(w).unwrap_or(UNK_ID);
                m.row_mut(r).copy_from_slice(table.row(id));
            }
            m
        }
        PromptInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            normal_matrix(k, d, INIT_STD, &mut rng)
        }
    };
    Ok(DomainPrompt {
        domain: domain.to_string(),
        matrix,
        init: mode,
        seed,
        base_fingerprint: model.fingerprint().clone(),
        steps: 0,
        dev_perplexity: None,
    })
}

impl<S: Scalar> LanguageModel<S> {
    /// Precomputes the prompt's per-layer state for repeated scoring.
    pub fn build_prefix_cache(&self, prompt: &DomainPrompt<S>) -> Result<PrefixCache<S>> {
        if &prompt.base_fingerprint != self.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: self.fingerprint().to_string(),
                found: prompt.base_fingerprint.to_string(),
            });
        }
        self.prefix_cache_from_rows(&prompt.matrix)
    }
}
