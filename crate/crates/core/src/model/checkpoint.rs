//! Checkpoint directory: `config.json`, `params.bin` (little-endian `f32`
//! tensors in [`Parameters::tensors`] order), `vocab.txt` and
//! `fingerprint.txt` (hex SHA-256 of `params.bin`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::params::Fingerprint;
use crate::model::{LanguageModel, ModelConfig, Parameters};
use crate::numerics::Scalar;
use crate::tokenizer::Vocab;

pub const CONFIG_FILE: &str = "config.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const FINGERPRINT_FILE: &str = "fingerprint.txt";

pub fn save_checkpoint<S: Scalar>(dir: &Path, model: &LanguageModel<S>, vocab: &Vocab) -> Result<Fingerprint> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let blob = model.params().to_blob();
    let fingerprint = Fingerprint::of(&blob);
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::file(path, e))
    };
    write(CONFIG_FILE, serde_json::to_string_pretty(model.config())?.as_bytes())?;
    write(PARAMS_FILE, &blob)?;
    write(VOCAB_FILE, vocab.to_file_string().as_bytes())?;
    write(FINGERPRINT_FILE, format!("{fingerprint}\n").as_bytes())?;
    Ok(fingerprint)
}

pub fn load_checkpoint<S: Scalar>(dir: &Path) -> Result<(LanguageModel<S>, Vocab)> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|e| Error::file(path, e))
    };
    let config: ModelConfig = serde_json::from_slice(&read(CONFIG_FILE)?)?;
    let blob = read(PARAMS_FILE)?;
    let stored = String::from_utf8_lossy(&read(FINGERPRINT_FILE)?).trim().to_string();
    let actual = Fingerprint::of(&blob);
    if stored != actual.0 {
        return Err(Error::FingerprintMismatch {
            expected: stored,
            found: actual.0,
        });
    }
    let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
    if vocab.len() != config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    let params = Parameters::from_blob(&config, &blob)?;
    Ok((LanguageModel::new(config, params)?, vocab))
}

/// Reads only the stored fingerprint of a checkpoint.
pub fn checkpoint_fingerprint(dir: &Path) -> Result<Fingerprint> {
    let path = dir.join(FINGERPRINT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::file(path, e))?;
    Ok(Fingerprint(text.trim().to_string()))
}
