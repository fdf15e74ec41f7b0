use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rescoring::nbest::{Hypothesis, NBestList};
use crate::rescoring::scorer::Scorer;
use crate::rescoring::wer::WerCounts;

/// Interpolation weights for acoustic, first-pass LM and second-pass LM scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescoreWeights {
    pub am: f64,
    pub flm: f64,
    pub lm: f64,
}

impl Default for RescoreWeights {
    fn default() -> Self {
        Self {
            am: 1.0,
            flm: 1.0,
            lm: 1.0,
        }
    }
}

impl RescoreWeights {
    pub fn new(am: f64, flm: f64, lm: f64) -> Result<Self> {
        let w = Self { am, flm, lm };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.am, self.flm, self.lm];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config(format!("weights must be finite and >= 0: {self:?}")));
        }
        if all.iter().all(|&x| x == 0.0) {
            return Err(Error::Config("at least one weight must be positive".into()));
        }
        Ok(())
    }
}

/// `λ_am·am + λ_flm·flm + λ_lm·lm`; higher is better.
pub fn interpolated_score(hyp: &Hypothesis, lm_logprob: f64, w: &RescoreWeights) -> f64 {
    w.am * hyp.am_score + w.flm * hyp.flm_score + w.lm * lm_logprob
}

/// Index of the best interpolated score; ties keep the earliest hypothesis.
pub fn select(list: &NBestList, lm: &[f64], w: &RescoreWeights) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, (h, &l)) in list.hyps.iter().zip(lm).enumerate() {
        let s = interpolated_score(h, l, w);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Second-pass LM scores of one utterance, or why scoring failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredUtterance {
    pub utt_id: String,
    pub lm_scores: std::result::Result<Vec<f64>, String>,
}

/// The chosen hypothesis of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub utt_id: String,
    pub index: usize,
    /// Set when scoring failed; the first-pass 1-best is kept in that case.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn score_one(list: &NBestList, scorer: &dyn Scorer) -> ScoredUtterance {
    let lm_scores = list
        .hyps
        .iter()
        .map(|h| scorer.lm_logprob(&h.text))
        .collect::<Result<Vec<f64>>>()
        .map_err(|e| e.to_string());
    ScoredUtterance {
        utt_id: list.utt_id.clone(),
        lm_scores,
    }
}

/// Scores every hypothesis, spreading utterances over the available cores.
/// Output order matches input order regardless of scheduling.
pub fn score_nbest(lists: &[NBestList], scorer: &dyn Scorer) -> Vec<ScoredUtterance> {
    let workers = thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(lists.len().max(1));
    if workers <= 1 {
        return lists.iter().map(|l| score_one(l, scorer)).collect();
    }
    let chunk = lists.len().div_ceil(workers);
    thread::scope(|s| {
        let handles: Vec<_> = lists
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|l| score_one(l, scorer)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scoring worker panicked"))
            .collect()
    })
}

/// Picks a hypothesis per utterance from precomputed LM scores.
pub fn select_all(lists: &[NBestList], scored: &[ScoredUtterance], w: &RescoreWeights) -> Vec<Selection> {
    lists
        .iter()
        .zip(scored)
        .map(|(list, s)| match &s.lm_scores {
            Ok(lm) => Selection {
                utt_id: list.utt_id.clone(),
                index: select(list, lm, w),
                error: None,
            },
            Err(e) => Selection {
                utt_id: list.utt_id.clone(),
                index: 0,
                error: Some(e.clone()),
            },
        })
        .collect()
}

/// Rescores every utterance. A scorer failure affects only its utterance,
/// which falls back to the first-pass 1-best and records the error.
pub fn rescore(lists: &[NBestList], scorer: &dyn Scorer, w: &RescoreWeights) -> Vec<Selection> {
    select_all(lists, &score_nbest(lists, scorer), w)
}

/// Corpus WER of choosing `indices[i]` in utterance `i`.
pub fn selection_wer(lists: &[NBestList], indices: impl IntoIterator<Item = usize>) -> Result<f64> {
    let mut total = WerCounts::default();
    for (list, i) in lists.iter().zip(indices) {
        let reference = list
            .reference
            .as_deref()
            .ok_or_else(|| Error::MissingReference(list.utt_id.clone()))?;
        let hyp = list.hyps.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: list.hyps.len(),
        })?;
        total = total + WerCounts::of(reference, &hyp.text)?;
    }
    Ok(total.rate())
}

/// Coordinate search over `λ_flm` and `λ_lm` (with `λ_am = 1`) minimizing
/// dev-set WER. Starts from the default weights; only strict improvements
/// move a coordinate, so ties keep the earlier setting.
pub fn tune_weights(lists: &[NBestList], scored: &[ScoredUtterance], grid: &[f64]) -> Result<RescoreWeights> {
    let mut w = RescoreWeights::default();
    let wer_of = |w: &RescoreWeights| selection_wer(lists, select_all(lists, scored, w).iter().map(|s| s.index));
    let mut best = wer_of(&w)?;
    for _ in 0..3 {
        let before = best;
        for coord in 0..2 {
            for &v in grid {
                let mut cand = w;
                if coord == 0 {
                    cand.flm = v;
                } else {
                    cand.lm = v;
                }
                if cand.validate().is_err() {
                    continue;
                }
                let e = wer_of(&cand)?;
                if e < best {
                    best = e;
                    w = cand;
                }
            }
        }
        if best >= before {
            break;
        }
    }
    Ok(w)
}
