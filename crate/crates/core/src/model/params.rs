use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::{Matrix, ParamKey, Scalar};

pub const INIT_STD: f64 = 0.02;

pub const TOKEN_EMBEDDING: ParamKey = ParamKey(0);
pub const POSITION_EMBEDDING: ParamKey = ParamKey(1);
pub const FINAL_NORM_GAIN: ParamKey = ParamKey(2);
pub const FINAL_NORM_BIAS: ParamKey = ParamKey(3);
const BLOCK_BASE: u32 = 16;
const BLOCK_STRIDE: u32 = 16;
pub const BLOCK_TENSORS: usize = 12;

/// Key of tensor `index` (in [`Block::tensors`] order) of block `layer`.
pub fn block_key(layer: usize, index: usize) -> ParamKey {
    ParamKey(BLOCK_BASE + layer as u32 * BLOCK_STRIDE + index as u32)
}

/// Hex SHA-256 of a parameter blob.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub String);

impl Fingerprint {
    pub fn of(bytes: &[u8]) -> Self {
        Fingerprint(hex::encode(Sha256::digest(bytes)))
    }
}

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Weights of one pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<S> {
    pub ln1_gain: Matrix<S>,
    pub ln1_bias: Matrix<S>,
    /// `d × 3d`, columns ordered query | key | value.
    pub qkv_weight: Matrix<S>,
    pub qkv_bias: Matrix<S>,
    pub out_weight: Matrix<S>,
    pub out_bias: Matrix<S>,
    pub ln2_gain: Matrix<S>,
    pub ln2_bias: Matrix<S>,
    pub ffn_in_weight: Matrix<S>,
    pub ffn_in_bias: Matrix<S>,
    pub ffn_out_weight: Matrix<S>,
    pub ffn_out_bias: Matrix<S>,
}

impl<S: Scalar> Block<S> {
    fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (d, f) = (config.d_model, config.d_ff);
        Self {
            ln1_gain: Matrix::filled(1, d, S::one()),
            ln1_bias: Matrix::zeros(1, d),
            qkv_weight: normal_matrix(d, 3 * d, INIT_STD, rng),
            qkv_bias: Matrix::zeros(1, 3 * d),
            out_weight: normal_matrix(d, d, INIT_STD, rng),
            out_bias: Matrix::zeros(1, d),
            ln2_gain: Matrix::filled(1, d, S::one()),
            ln2_bias: Matrix::zeros(1, d),
            ffn_in_weight: normal_matrix(d, f, INIT_STD, rng),
            ffn_in_bias: Matrix::zeros(1, f),
            ffn_out_weight: normal_matrix(f, d, INIT_STD, rng),
            ffn_out_bias: Matrix::zeros(1, d),
        }
    }

    pub fn tensors(&self) -> [&Matrix<S>; BLOCK_TENSORS] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.qkv_weight,
            &self.qkv_bias,
            &self.out_weight,
            &self.out_bias,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.ffn_in_weight,
            &self.ffn_in_bias,
            &self.ffn_out_weight,
            &self.ffn_out_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix<S>; BLOCK_TENSORS] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.qkv_weight,
            &mut self.qkv_bias,
            &mut self.out_weight,
            &mut self.out_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.ffn_in_weight,
            &mut self.ffn_in_bias,
            &mut self.ffn_out_weight,
            &mut self.ffn_out_bias,
        ]
    }
}

pub(crate) fn normal_matrix<S: Scalar>(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Matrix<S> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Matrix::from_fn(rows, cols, |_, _| S::from_f64_lossy(dist.sample(rng)))
}

/// Backbone parameters. The token embedding (`φ`) doubles as the output
/// projection; everything else (`θ`) is the positional table, the blocks and
/// the final norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<S> {
    pub token_embedding: Matrix<S>,
    pub position_embedding: Matrix<S>,
    pub blocks: Vec<Block<S>>,
    pub final_norm_gain: Matrix<S>,
    pub final_norm_bias: Matrix<S>,
}

impl<S: Scalar> Parameters<S> {
    /// Deterministic `N(0, 0.02²)` initialization; norms start at gain 1, bias 0.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let token_embedding = normal_matrix(config.vocab_size, d, INIT_STD, &mut rng);
        let position_embedding = normal_matrix(config.max_positions, d, INIT_STD, &mut rng);
        let blocks = (0..config.n_layers)
            .map(|_| Block::init(config, &mut rng))
            .collect();
        Ok(Self {
            token_embedding,
            position_embedding,
            blocks,
            final_norm_gain: Matrix::filled(1, d, S::one()),
            final_norm_bias: Matrix::zeros(1, d),
        })
    }

    /// All tensors in serialization order: token embedding, positional
    /// embedding, each block's twelve tensors, final norm gain and bias.
    pub fn tensors(&self) -> Vec<(ParamKey, &Matrix<S>)> {
        let mut out = vec![
            (TOKEN_EMBEDDING, &self.token_embedding),
            (POSITION_EMBEDDING, &self.position_embedding),
        ];
        for (l, block) in self.blocks.iter().enumerate() {
            for (i, t) in block.tensors().into_iter().enumerate() {
                out.push((block_key(l, i), t));
            }
        }
        out.push((FINAL_NORM_GAIN, &self.final_norm_gain));
        out.push((FINAL_NORM_BIAS, &self.final_norm_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamKey, &mut Matrix<S>)> {
        let mut out = vec![
            (TOKEN_EMBEDDING, &mut self.token_embedding),
            (POSITION_EMBEDDING, &mut self.position_embedding),
        ];
        for (l, block) in self.blocks.iter_mut().enumerate() {
            for (i, t) in block.tensors_mut().into_iter().enumerate() {
                out.push((block_key(l, i), t));
            }
        }
        out.push((FINAL_NORM_GAIN, &mut self.final_norm_gain));
        out.push((FINAL_NORM_BIAS, &mut self.final_norm_bias));
        out
    }

    pub fn keys(&self) -> Vec<ParamKey> {
        self.tensors().into_iter().map(|(k, _)| k).collect()
    }

    /// Keys of every tensor except the token embedding.
    pub fn theta_keys(&self) -> Vec<ParamKey> {
        self.keys()
            .into_iter()
            .filter(|&k| k != TOKEN_EMBEDDING)
            .collect()
    }

    pub fn tensor_mut(&mut self, key: ParamKey) -> Option<&mut Matrix<S>> {
        self.tensors_mut()
            .into_iter()
            .find(|(k, _)| *k == key)
            .map(|(_, t)| t)
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Little-endian `f32` values of every tensor in serialization order.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.count() * 4);
        for (_, t) in self.tensors() {
            write_f32(&mut out, t);
        }
        out
    }

    /// Blob of `θ`: everything except the token embedding.
    pub fn theta_blob(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (k, t) in self.tensors() {
            if k != TOKEN_EMBEDDING {
                write_f32(&mut out, t);
            }
        }
        out
    }

    /// Blob of `φ`: the token embedding.
    pub fn phi_blob(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_f32(&mut out, &self.token_embedding);
        out
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(&self.to_blob())
    }

    pub fn from_blob(config: &ModelConfig, blob: &[u8]) -> Result<Self> {
        let mut params = Self::init(config)?;
        let expected = params.count() * 4;
        if blob.len() != expected {
            return Err(Error::Format {
                what: "parameter blob",
                message: format!("{} bytes, expected {expected}", blob.len()),
            });
        }
        let mut offset = 0;
        for (_, t) in params.tensors_mut() {
            offset = read_f32(&blob[offset..], t) + offset;
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("parameter blob"));
        }
        Ok(params)
    }

    pub fn cast<T: Scalar>(&self) -> Parameters<T> {
        Parameters {
            token_embedding: self.token_embedding.cast(),
            position_embedding: self.position_embedding.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    ln1_gain: b.ln1_gain.cast(),
                    ln1_bias: b.ln1_bias.cast(),
                    qkv_weight: b.qkv_weight.cast(),
                    qkv_bias: b.qkv_bias.cast(),
                    out_weight: b.out_weight.cast(),
                    out_bias: b.out_bias.cast(),
                    ln2_gain: b.ln2_gain.cast(),
                    ln2_bias: b.ln2_bias.cast(),
                    ffn_in_weight: b.ffn_in_weight.cast(),
                    ffn_in_bias: b.ffn_in_bias.cast(),
                    ffn_out_weight: b.ffn_out_weight.cast(),
                    ffn_out_bias: b.ffn_out_bias.cast(),
                })
                .collect(),
            final_norm_gain: self.final_norm_gain.cast(),
            final_norm_bias: self.final_norm_bias.cast(),
        }
    }
}

pub(crate) fn write_f32<S: Scalar>(out: &mut Vec<u8>, m: &Matrix<S>) {
    for v in m.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

/// Fills `m` from little-endian `f32` bytes; returns the bytes consumed.
pub(crate) fn read_f32<S: Scalar>(bytes: &[u8], m: &mut Matrix<S>) -> usize {
    for (v, chunk) in m.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
        let raw = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        *v = S::from_f64_lossy(raw as f64);
    }
    m.len() * 4
}
