use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptation::Method;
use crate::error::{Error, Result};
use crate::model::TrainHyper;
use crate::rescoring::RescoreWeights;

fn default_ratio() -> f64 {
    0.8
}

fn default_epochs() -> usize {
    10
}

fn default_batch_tokens() -> usize {
    256
}

fn default_patience() -> Option<usize> {
    Some(3)
}

/// One domain of an experiment: its text corpus and evaluation n-best file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub name: String,
    pub corpus: PathBuf,
    pub nbest: PathBuf,
    /// Held-out n-best lists for tuning interpolation weights.
    #[serde(default)]
    pub dev_nbest: Option<PathBuf>,
}

/// An adaptation method and its hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    /// Method spec understood by [`Method::parse`], e.g. `prompt:50`.
    pub method: String,
    /// Learning-rate grid; defaults depend on the method.
    #[serde(default)]
    pub lrs: Option<Vec<f64>>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_tokens")]
    pub batch_tokens: usize,
    #[serde(default = "default_patience")]
    pub patience: Option<usize>,
}

impl MethodConfig {
    pub fn new(method: &str) -> Self {
        Self {
            method: method.to_string(),
            lrs: None,
            epochs: default_epochs(),
            batch_tokens: default_batch_tokens(),
            patience: default_patience(),
        }
    }

    pub fn parsed(&self) -> Result<Method> {
        Method::parse(&self.method)
    }

    /// The configured grid, or `{1e-1, 1e-2, 1e-3}` for prompt methods and
    /// `{1e-3, 1e-4}` for the rest. Untrained methods get an empty grid.
    pub fn lr_grid(&self) -> Result<Vec<f64>> {
        let method = self.parsed()?;
        if !method.is_trained() {
            return Ok(vec![]);
        }
        if let Some(lrs) = &self.lrs {
            if lrs.is_empty() {
                return Err(Error::Config(format!("empty lr grid for `{}`", self.method)));
            }
            return Ok(lrs.clone());
        }
        Ok(match method {
            Method::Prompt { .. } | Method::DomainEmbedding => vec![1e-1, 1e-2, 1e-3],
            _ => vec![1e-3, 1e-4],
        })
    }

    pub fn hyper(&self, lr: f64, seed: u64) -> TrainHyper {
        TrainHyper {
            lr,
            epochs: self.epochs,
            batch_tokens: self.batch_tokens,
            patience: self.patience,
            seed,
        }
    }
}

/// Everything needed to reproduce a method-comparison run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Pretrained checkpoint directory.
    pub checkpoint: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "default_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub seed: u64,
    pub domains: Vec<DomainConfig>,
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub weights: RescoreWeights,
    /// Values tried for `λ_flm` and `λ_lm` when a domain has `dev_nbest`.
    #[serde(default)]
    pub weight_grid: Option<Vec<f64>>,
    /// Length-normalize LM scores (mean instead of summed log-probability).
    #[serde(default)]
    pub per_token: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Format {
            what: "experiment config",
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format {
            what: "experiment config",
            message: e.to_string(),
        })
    }

    /// Reads a TOML config; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.checkpoint);
        fix(&mut self.output_dir);
        for d in &mut self.domains {
            fix(&mut d.corpus);
            fix(&mut d.nbest);
            if let Some(p) = &mut d.dev_nbest {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!("split ratio {} must be in (0, 1)", self.split_ratio)));
        }
        if self.domains.is_empty() {
            return Err(Error::Config("no domains configured".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        for m in &self.methods {
            m.lr_grid()?;
        }
        self.weights.validate()?;
        Ok(())
    }

    /// Every referenced input path must exist.
    pub fn check_paths(&self) -> Result<()> {
        let mut paths = vec![&self.checkpoint];
        for d in &self.domains {
            paths.push(&d.corpus);
            paths.push(&d.nbest);
            if let Some(p) = &d.dev_nbest {
                paths.push(p);
            }
        }
        for p in paths {
            if !p.exists() {
                return Err(Error::file(
                    p.clone(),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced path does not exist"),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
checkpoint = "base"
output_dir = "out"
seed = 4

[[domains]]
name = "airlines"
corpus = "airlines.txt"
nbest = "airlines.nbest.jsonl"

[[methods]]
method = "no-adaptation"

[[methods]]
method = "prompt:50"
epochs = 3

[[methods]]
method = "adapter:16"
lrs = [0.01]
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(TEXT).unwrap();
        assert_eq!(c.split_ratio, 0.8);
        assert_eq!(c.weights, RescoreWeights::default());
        assert_eq!(c.methods[1].epochs, 3);
        assert_eq!(c.methods[1].patience, Some(3));
        assert_eq!(c.methods[0].lr_grid().unwrap(), Vec::<f64>::new());
        assert_eq!(c.methods[1].lr_grid().unwrap(), vec![1e-1, 1e-2, 1e-3]);
        assert_eq!(c.methods[2].lr_grid().unwrap(), vec![0.01]);
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml(&TEXT.replace("seed = 4", "split_ratio = 1.0")).is_err());
        assert!(ExperimentConfig::from_toml(&TEXT.replace("prompt:50", "lstm")).is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut c = ExperimentConfig::from_toml(TEXT).unwrap();
        c.resolve_paths(Path::new("/data/exp"));
        assert_eq!(c.checkpoint, Path::new("/data/exp/base"));
        assert_eq!(c.domains[0].nbest, Path::new("/data/exp/airlines.nbest.jsonl"));
        assert!(c.check_paths().is_err());
    }
}
