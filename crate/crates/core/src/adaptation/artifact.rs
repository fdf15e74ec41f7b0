//! Persistence of adaptation outputs next to the base checkpoint, and the
//! manifest that indexes them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptation::adapter::{AdapterConfig, AdapterSet};
use crate::adaptation::methods::{AdaptationResult, Adapted, Method};
use crate::adaptation::prompt::DomainPrompt;
use crate::error::{Error, Result};
use crate::model::params::Fingerprint;
use crate::model::{save_checkpoint, ModelConfig};
use crate::numerics::Scalar;
use crate::tokenizer::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub domain: String,
    pub method: String,
    /// Relative to the manifest's directory; absent for the unadapted model.
    pub artifact: Option<PathBuf>,
    pub trainable_params: usize,
    /// Fingerprint of the artifact's own parameter blob.
    pub fingerprint: Option<Fingerprint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_words: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub base_fingerprint: Option<Fingerprint>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks every referenced artifact exists and still hashes to its
    /// recorded fingerprint.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for e in &self.entries {
            let (Some(rel), Some(expected)) = (&e.artifact, &e.fingerprint) else {
                continue;
            };
            let path = dir.join(rel);
            let found = artifact_fingerprint(&path)?;
            if &found != expected {
                return Err(Error::FingerprintMismatch {
                    expected: expected.to_string(),
                    found: found.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Header stored beside an adapter blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterHeader {
    pub reduction_factor: usize,
    pub base_fingerprint: Fingerprint,
    pub fingerprint: Fingerprint,
}

fn file_stem(domain: &str, method: &Method) -> String {
    let mut m = String::new();
    for c in method.name().chars() {
        if c.is_ascii_alphanumeric() {
            m.push(c);
        } else if !m.ends_with('-') {
            m.push('-');
        }
    }
    format!("{domain}.{}", m.trim_end_matches('-'))
}

/// Fingerprint of a saved artifact: the prompt matrix bytes of a `.dpmt`,
/// the adapter blob, or a checkpoint directory's parameter blob.
pub fn artifact_fingerprint(path: &Path) -> Result<Fingerprint> {
    if path.is_dir() {
        let blob_path = path.join(crate::model::checkpoint::PARAMS_FILE);
        let blob = fs::read(&blob_path).map_err(|e| Error::file(blob_path, e))?;
        return Ok(Fingerprint::of(&blob));
    }
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    if path.extension().is_some_and(|e| e == "dpmt") {
        let prompt = DomainPrompt::<f32>::from_bytes(&bytes)?;
        let mut blob = Vec::new();
        crate::model::params::write_f32(&mut blob, &prompt.matrix);
        Ok(Fingerprint::of(&blob))
    } else {
        Ok(Fingerprint::of(&bytes))
    }
}

pub fn save_adapters<S: Scalar>(
    path: &Path,
    adapters: &AdapterSet<S>,
    base_fingerprint: &Fingerprint,
) -> Result<Fingerprint> {
    let blob = adapters.to_blob();
    let fingerprint = Fingerprint::of(&blob);
    fs::write(path, &blob).map_err(|e| Error::file(path, e))?;
    let header = AdapterHeader {
        reduction_factor: adapters.config.reduction_factor,
        base_fingerprint: base_fingerprint.clone(),
        fingerprint: fingerprint.clone(),
    };
    let header_path = path.with_extension("json");
    fs::write(&header_path, serde_json::to_string_pretty(&header)?)
        .map_err(|e| Error::file(header_path, e))?;
    Ok(fingerprint)
}

pub fn load_adapters<S: Scalar>(path: &Path, model: &ModelConfig) -> Result<(AdapterSet<S>, AdapterHeader)> {
    let header_path = path.with_extension("json");
    let text = fs::read_to_string(&header_path).map_err(|e| Error::file(&header_path, e))?;
    let header: AdapterHeader = serde_json::from_str(&text)?;
    let blob = fs::read(path).map_err(|e| Error::file(path, e))?;
    let found = Fingerprint::of(&blob);
    if found != header.fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: header.fingerprint.to_string(),
            found: found.to_string(),
        });
    }
    let set = AdapterSet::from_blob(AdapterConfig::new(header.reduction_factor)?, model, &blob)?;
    Ok((set, header))
}

/// Writes an adaptation result into `dir` and returns its manifest entry.
pub fn save_result<S: Scalar>(
    dir: &Path,
    domain: &str,
    result: &AdaptationResult<S>,
    base_fingerprint: &Fingerprint,
    vocab: &Vocab,
) -> Result<ManifestEntry> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let stem = file_stem(domain, &result.method);
    let (artifact, fingerprint, prompt_words) = match &result.adapted {
        Adapted::Base => (None, None, None),
        Adapted::Prompt { prompt, words } => {
            let rel = PathBuf::from(format!("{stem}.dpmt"));
            prompt.save(&dir.join(&rel))?;
            let fp = artifact_fingerprint(&dir.join(&rel))?;
            (Some(rel), Some(fp), words.clone())
        }
        Adapted::Adapters(set) => {
            let rel = PathBuf::from(format!("{stem}.adapter.bin"));
            let fp = save_adapters(&dir.join(&rel), set, base_fingerprint)?;
            (Some(rel), Some(fp), None)
        }
        Adapted::Model(model) => {
            let rel = PathBuf::from(stem);
            let fp = save_checkpoint(&dir.join(&rel), model, vocab)?;
            (Some(rel), Some(fp), None)
        }
    };
    Ok(ManifestEntry {
        domain: domain.to_string(),
        method: result.method.name(),
        artifact,
        trainable_params: result.trainable,
        fingerprint,
        prompt_words,
    })
}
