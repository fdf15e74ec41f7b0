//! Domain prompts: adapting a frozen causal transformer language model to a
//! new domain by learning a handful of prefix embeddings, and using the
//! adapted model to rescore n-best speech recognition hypotheses.

pub mod adaptation;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod rescoring;
pub mod tokenizer;

pub use error::{Error, Result};
