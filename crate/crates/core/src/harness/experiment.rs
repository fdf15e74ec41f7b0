use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptation::artifact::{load_adapters, save_result};
use crate::adaptation::{select_by_dev, train_baseline, AdaptationResult, Adapted, DomainPrompt, Manifest, TrainJob};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, MethodConfig};
use crate::harness::seeds::sub_seed;
use crate::harness::split::split_corpus;
use crate::model::{load_checkpoint, Fingerprint, LanguageModel};
use crate::numerics::Scalar;
use crate::rescoring::{
    evaluate, load_nbest, render_table, score_nbest, tune_weights, EvalReport, ModelScorer, NBestList,
    RescoreWeights, ScorerPrefix, System,
};
use crate::tokenizer::{Tokenizer, Vocab};

/// An adapted second-pass LM ready for scoring: a backbone plus an optional
/// prefix (cached for prompts).
pub struct SecondPass<S: Scalar> {
    pub model: LanguageModel<S>,
    pub prefix: ScorerPrefix<S>,
}

impl<S: Scalar> SecondPass<S> {
    pub fn new(base: &LanguageModel<S>, adapted: &Adapted<S>) -> Result<Self> {
        Ok(match adapted {
            Adapted::Base => Self {
                model: base.clone(),
                prefix: ScorerPrefix::None,
            },
            Adapted::Prompt { prompt, .. } => Self {
                model: base.clone(),
                prefix: ScorerPrefix::Cached(base.build_prefix_cache(prompt)?),
            },
            Adapted::Model(m) => Self {
                model: m.clone(),
                prefix: ScorerPrefix::None,
            },
            Adapted::Adapters(a) => Self {
                model: base.clone().with_adapters(a.clone())?,
                prefix: ScorerPrefix::None,
            },
        })
    }

    /// Loads a saved artifact for `base`: a `.dpmt` prompt, an adapter blob
    /// (with its `.json` header beside it) or a checkpoint directory.
    pub fn load(base: &LanguageModel<S>, artifact: &Path) -> Result<Self> {
        if artifact.is_dir() {
            let (model, _) = load_checkpoint(artifact)?;
            return Ok(Self {
                model,
                prefix: ScorerPrefix::None,
            });
        }
        if artifact.extension().is_some_and(|e| e == "dpmt") {
            let prompt = DomainPrompt::<S>::load(artifact)?;
            return Ok(Self {
                model: base.clone(),
                prefix: ScorerPrefix::Cached(base.build_prefix_cache(&prompt)?),
            });
        }
        let (adapters, header) = load_adapters(artifact, base.config())?;
        if &header.base_fingerprint != base.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: base.fingerprint().to_string(),
                found: header.base_fingerprint.to_string(),
            });
        }
        Ok(Self {
            model: base.clone().with_adapters(adapters)?,
            prefix: ScorerPrefix::None,
        })
    }

    pub fn scorer<'a, T: Tokenizer + Sync>(&'a self, tokenizer: &'a T, per_token: bool) -> ModelScorer<'a, S, T> {
        ModelScorer::new(&self.model, tokenizer)
            .with_prefix(self.prefix.clone())
            .per_token(per_token)
    }
}

/// Trains `method` once per learning rate in its grid and keeps the run with
/// the lowest dev perplexity. Returns the chosen rate (if any) and result.
pub fn train_method<S: Scalar, T: Tokenizer>(
    model: &LanguageModel<S>,
    tokenizer: &T,
    domain: &str,
    method: &MethodConfig,
    train: &[String],
    dev: &[String],
    seed: u64,
) -> Result<(Option<f64>, AdaptationResult<S>)> {
    let parsed = method.parsed()?;
    let job = |lr: f64| TrainJob {
        domain: domain.to_string(),
        method: parsed,
        hyper: method.hyper(lr, seed),
        train: train.to_vec(),
        dev: dev.to_vec(),
    };
    let grid = method.lr_grid()?;
    if grid.is_empty() {
        return Ok((None, train_baseline(model, tokenizer, &job(0.0))?));
    }
    let (lr, result) = select_by_dev(
        &grid,
        |lr| train_baseline(model, tokenizer, &job(lr)),
        |r| r.best_dev_perplexity(),
    )?;
    Ok((Some(lr), result))
}

/// One (domain, method) cell of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub domain: String,
    pub method: String,
    pub trainable_params: usize,
    pub lr: Option<f64>,
    pub dev_perplexity: Option<f64>,
    pub weights: Option<RescoreWeights>,
    pub wer: Option<f64>,
    pub werr: Option<f64>,
    /// `stage: message` when the cell did not complete.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainResult {
    pub domain: String,
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub eval: Option<EvalReport>,
    pub error: Option<String>,
}

/// Method comparison across domains: trainable parameters and WERR per
/// domain, plus each domain's full evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub base_fingerprint: Fingerprint,
    pub methods: Vec<String>,
    pub cells: Vec<Cell>,
    pub domains: Vec<DomainResult>,
}

impl ExperimentReport {
    pub fn cell(&self, domain: &str, method: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.domain == domain && c.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Rows: no-rescoring, each method, oracle. Columns: trainable params,
    /// then WERR % per domain.
    pub fn table(&self) -> String {
        let domains: Vec<&str> = self.domains.iter().map(|d| d.domain.as_str()).collect();
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["method".to_string(), "# params".to_string()];
        header.extend(domains.iter().map(|d| format!("{d} WERR %")));
        rows.push(header);
        let mut baseline = vec!["no-rescoring".to_string(), "0".to_string()];
        baseline.extend(domains.iter().map(|_| format!("{:.2}", 0.0)));
        rows.push(baseline);
        for m in &self.methods {
            let params = self
                .cells
                .iter()
                .find(|c| &c.method == m)
                .map_or("-".to_string(), |c| c.trainable_params.to_string());
            let mut row = vec![m.clone(), params];
            for d in &domains {
                row.push(match self.cell(d, m) {
                    Some(Cell { werr: Some(w), .. }) => format!("{w:.2}"),
                    _ => "failed".to_string(),
                });
            }
            rows.push(row);
        }
        let mut oracle = vec!["oracle".to_string(), "-".to_string()];
        for d in &self.domains {
            oracle.push(match &d.eval {
                Some(e) => format!("{:.2}", crate::rescoring::werr(e.baseline_wer, e.oracle_wer)),
                None => "failed".to_string(),
            });
        }
        rows.push(oracle);
        render_table(&rows)
    }
}

/// Report plus the manifest of every saved artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub manifest: Manifest,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

struct DomainData {
    train: Vec<String>,
    dev: Vec<String>,
    nbest: Vec<NBestList>,
    dev_nbest: Option<Vec<NBestList>>,
}

fn load_domain(config: &ExperimentConfig, index: usize) -> Result<DomainData> {
    let d = &config.domains[index];
    let corpus = read_lines(&d.corpus).map_err(|e| e.in_stage(format!("read-corpus/{}", d.name)))?;
    let (train, dev) = split_corpus(&corpus, config.split_ratio, sub_seed(config.seed, &format!("split/{}", d.name)))
        .map_err(|e| e.in_stage(format!("split/{}", d.name)))?;
    let nbest = load_nbest(&d.nbest).map_err(|e| e.in_stage(format!("load-nbest/{}", d.name)))?;
    let dev_nbest = match &d.dev_nbest {
        Some(p) => Some(load_nbest(p).map_err(|e| e.in_stage(format!("load-dev-nbest/{}", d.name)))?),
        None => None,
    };
    Ok(DomainData {
        train,
        dev,
        nbest,
        dev_nbest,
    })
}

/// Runs every (domain, method) cell: split the domain corpus, train over the
/// method's lr grid, keep the best dev perplexity, rescore the domain's
/// n-best lists and report WERR against the first-pass 1-best.
///
/// A failing cell or domain is recorded with its stage name and the run
/// continues; the report, its table and the manifest are written to the
/// output directory either way. Only a missing base checkpoint aborts.
pub fn run_experiment<S: Scalar>(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let (base, vocab): (LanguageModel<S>, Vocab) =
        load_checkpoint(&config.checkpoint).map_err(|e| e.in_stage("load-checkpoint"))?;
    let artifacts = config.output_dir.join("artifacts");
    let methods: Vec<String> = config.methods.iter().map(|m| m.parsed().map(|p| p.name())).collect::<Result<_>>()?;
    let mut manifest = Manifest {
        base_fingerprint: Some(base.fingerprint().clone()),
        entries: vec![],
    };
    let mut cells = Vec::new();
    let mut domains = Vec::new();

    for (di, dconf) in config.domains.iter().enumerate() {
        let name = &dconf.name;
        let data = match load_domain(config, di) {
            Ok(d) => d,
            Err(e) => {
                let msg = e.to_string();
                for m in &config.methods {
                    cells.push(failed_cell(name, m, &base, msg.clone()));
                }
                domains.push(DomainResult {
                    domain: name.clone(),
                    train_sentences: 0,
                    dev_sentences: 0,
                    eval: None,
                    error: Some(msg),
                });
                continue;
            }
        };
        let train_seed = sub_seed(config.seed, &format!("train/{name}"));
        let mut passes: Vec<(usize, SecondPass<S>, Cell)> = Vec::new();
        for (mi, mconf) in config.methods.iter().enumerate() {
            let stage = format!("train/{name}/{}", methods[mi]);
            let trained = train_method(&base, &vocab, name, mconf, &data.train, &data.dev, train_seed)
                .map_err(|e| e.in_stage(&stage))
                .and_then(|(lr, result)| {
                    let entry = save_result(&artifacts, name, &result, base.fingerprint(), &vocab)
                        .map_err(|e| e.in_stage(format!("save/{name}/{}", methods[mi])))?;
                    let pass = SecondPass::new(&base, &result.adapted)
                        .map_err(|e| e.in_stage(format!("prepare-scorer/{name}/{}", methods[mi])))?;
                    Ok((lr, result, entry, pass))
                });
            match trained {
                Ok((lr, result, entry, pass)) => {
                    manifest.entries.push(entry);
                    let weights = match (&data.dev_nbest, &config.weight_grid) {
                        (Some(dev_lists), Some(grid)) => {
                            let scorer = pass.scorer(&vocab, config.per_token);
                            let scored = score_nbest(dev_lists, &scorer);
                            tune_weights(dev_lists, &scored, grid).unwrap_or(config.weights)
                        }
                        _ => config.weights,
                    };
                    passes.push((
                        mi,
                        pass,
                        Cell {
                            domain: name.clone(),
                            method: methods[mi].clone(),
                            trainable_params: result.trainable,
                            lr,
                            dev_perplexity: result.best_dev_perplexity(),
                            weights: Some(weights),
                            wer: None,
                            werr: None,
                            error: None,
                        },
                    ));
                }
                Err(e) => cells.push(failed_cell(name, mconf, &base, e.to_string())),
            }
        }

        let scorers: Vec<_> = passes.iter().map(|(_, p, _)| p.scorer(&vocab, config.per_token)).collect();
        let systems: Vec<System<'_>> = passes
            .iter()
            .zip(&scorers)
            .map(|((_, _, cell), scorer)| System {
                name: cell.method.clone(),
                trainable_params: cell.trainable_params,
                scorer,
                weights: cell.weights.unwrap_or(config.weights),
            })
            .collect();
        let evaluated = evaluate(&data.nbest, &systems).map_err(|e| e.in_stage(format!("evaluate/{name}")));
        let (eval, error) = match evaluated {
            Ok(report) => (Some(report), None),
            Err(e) => (None, Some(e.to_string())),
        };
        for (_, _, mut cell) in passes {
            match &eval {
                Some(r) => {
                    let sys = r.system(&cell.method).expect("every system is evaluated");
                    cell.wer = Some(sys.wer);
                    cell.werr = Some(sys.werr);
                }
                None => cell.error = error.clone(),
            }
            cells.push(cell);
        }
        domains.push(DomainResult {
            domain: name.clone(),
            train_sentences: data.train.len(),
            dev_sentences: data.dev.len(),
            eval,
            error,
        });
    }

    let order = |c: &Cell| {
        let d = config.domains.iter().position(|x| x.name == c.domain).unwrap_or(usize::MAX);
        let m = methods.iter().position(|x| *x == c.method).unwrap_or(usize::MAX);
        (d, m)
    };
    cells.sort_by_key(order);
    let report = ExperimentReport {
        seed: config.seed,
        base_fingerprint: base.fingerprint().clone(),
        methods,
        cells,
        domains,
    };
    write_outputs(&config.output_dir, &report, &manifest).map_err(|e| e.in_stage("write-report"))?;
    Ok(ExperimentOutput { report, manifest })
}

fn failed_cell<S: Scalar>(domain: &str, m: &MethodConfig, base: &LanguageModel<S>, error: String) -> Cell {
    let (name, trainable) = match m.parsed() {
        Ok(p) => (p.name(), crate::adaptation::count_trainable(&p, base.config())),
        Err(_) => (m.method.clone(), 0),
    };
    Cell {
        domain: domain.to_string(),
        method: name,
        trainable_params: trainable,
        lr: None,
        dev_perplexity: None,
        weights: None,
        wer: None,
        werr: None,
        error: Some(error),
    }
}

pub fn write_outputs(dir: &Path, report: &ExperimentReport, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::file(path, e))
    };
    write("report.json", report.to_json()?)?;
    write("report.txt", report.table())?;
    manifest.save(&dir.join("manifest.json"))
}
