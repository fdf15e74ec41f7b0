//! Decoder-only causal transformer language model.
//!
//! Inputs are laid out as `[prompt rows] [BOS] x_1 … x_{T-1}`; prompt rows
//! take positions `0..k`, BOS position `k`, tokens `k+1` onward. Output row
//! `t` predicts `x_t`, so prompted and unprompted scores cover the same `T`
//! prediction terms. The output projection is the token embedding.

mod cache;
pub mod checkpoint;
mod config;
mod forward;
mod generate;
pub mod params;
mod train;

pub use cache::PrefixCache;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ModelConfig;
pub use forward::{LanguageModel, Prefix, SequenceScore};
pub(crate) use forward::{Dropout, Net, PrefixNode};
pub use generate::DecodeMode;
pub use params::{Fingerprint, Parameters};
pub use train::{encode_corpus, pretrain, Adam, TrainHyper, TrainLog};
pub(crate) use train::{fit, full_sequence_grads, DevFn, KeyedTensor};
