use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rescoring::nbest::NBestList;
use crate::rescoring::rescore::{rescore, selection_wer, RescoreWeights, Selection};
use crate::rescoring::scorer::Scorer;
use crate::rescoring::wer::WerCounts;

/// A named second-pass system to evaluate.
pub struct System<'a> {
    pub name: String,
    pub trainable_params: usize,
    pub scorer: &'a dyn Scorer,
    pub weights: RescoreWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemResult {
    pub name: String,
    pub trainable_params: usize,
    pub weights: RescoreWeights,
    pub wer: f64,
    pub werr: f64,
    pub failures: usize,
    pub selections: Vec<Selection>,
}

/// Corpus WER of each system against the 1-best baseline and the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub utterances: usize,
    pub reference_words: usize,
    pub baseline_wer: f64,
    pub oracle_wer: f64,
    /// WER of always choosing the worst hypothesis.
    pub worst_wer: f64,
    pub oracle_selections: Vec<usize>,
    pub systems: Vec<SystemResult>,
}

/// `100·(base − sys)/base`; 0 when the baseline is already perfect.
pub fn werr(baseline_wer: f64, system_wer: f64) -> f64 {
    if baseline_wer == 0.0 {
        0.0
    } else {
        100.0 * (baseline_wer - system_wer) / baseline_wer
    }
}

/// Per-hypothesis edit counts; the lowest-edit hypothesis (earliest on ties)
/// is the oracle choice.
fn edit_table(lists: &[NBestList]) -> Result<Vec<Vec<WerCounts>>> {
    lists
        .iter()
        .map(|l| {
            let reference = l
                .reference
                .as_deref()
                .ok_or_else(|| Error::MissingReference(l.utt_id.clone()))?;
            l.hyps.iter().map(|h| WerCounts::of(reference, &h.text)).collect()
        })
        .collect()
}

fn argmin_edits(row: &[WerCounts], worst: bool) -> usize {
    let mut best = 0;
    for (i, c) in row.iter().enumerate() {
        let better = if worst {
            c.edits > row[best].edits
        } else {
            c.edits < row[best].edits
        };
        if better {
            best = i;
        }
    }
    best
}

/// Rescores `lists` with every system and reports WER, WERR and oracle WER.
pub fn evaluate(lists: &[NBestList], systems: &[System<'_>]) -> Result<EvalReport> {
    if lists.is_empty() {
        return Err(Error::Empty("n-best corpus"));
    }
    let table = edit_table(lists)?;
    let oracle_selections: Vec<usize> = table.iter().map(|r| argmin_edits(r, false)).collect();
    let worst: Vec<usize> = table.iter().map(|r| argmin_edits(r, true)).collect();
    let baseline_wer = selection_wer(lists, std::iter::repeat(0))?;
    let oracle_wer = selection_wer(lists, oracle_selections.iter().copied())?;
    let worst_wer = selection_wer(lists, worst)?;
    let mut results = Vec::with_capacity(systems.len());
    for sys in systems {
        sys.weights.validate()?;
        let selections = rescore(lists, sys.scorer, &sys.weights);
        let wer = selection_wer(lists, selections.iter().map(|s| s.index))?;
        results.push(SystemResult {
            name: sys.name.clone(),
            trainable_params: sys.trainable_params,
            weights: sys.weights,
            wer,
            werr: werr(baseline_wer, wer),
            failures: selections.iter().filter(|s| s.error.is_some()).count(),
            selections,
        });
    }
    Ok(EvalReport {
        utterances: lists.len(),
        reference_words: table.iter().map(|r| r[0].ref_words).sum(),
        baseline_wer,
        oracle_wer,
        worst_wer,
        oracle_selections,
        systems: results,
    })
}

impl EvalReport {
    pub fn system(&self, name: &str) -> Option<&SystemResult> {
        self.systems.iter().find(|s| s.name == name)
    }

    /// Recomputes every WER and WERR from the stored selections.
    pub fn check_consistency(&self, lists: &[NBestList]) -> Result<()> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        let oracle = selection_wer(lists, self.oracle_selections.iter().copied())?;
        if !close(oracle, self.oracle_wer) {
            return Err(Error::Config(format!("oracle WER {} != stored {}", oracle, self.oracle_wer)));
        }
        for s in &self.systems {
            let w = selection_wer(lists, s.selections.iter().map(|x| x.index))?;
            if !close(w, s.wer) || !close(werr(self.baseline_wer, w), s.werr) {
                return Err(Error::Config(format!("system `{}` does not recompute", s.name)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned plain-text table: one row per system plus baseline and oracle.
    pub fn table(&self) -> String {
        let mut rows: Vec<Vec<String>> = vec![vec![
            "system".into(),
            "trainable params".into(),
            "WER %".into(),
            "WERR %".into(),
        ]];
        rows.push(vec![
            "no-rescoring".into(),
            "0".into(),
            format!("{:.2}", 100.0 * self.baseline_wer),
            format!("{:.2}", 0.0),
        ]);
        for s in &self.systems {
            rows.push(vec![
                s.name.clone(),
                s.trainable_params.to_string(),
                format!("{:.2}", 100.0 * s.wer),
                format!("{:.2}", s.werr),
            ]);
        }
        rows.push(vec![
            "oracle".into(),
            "-".into(),
            format!("{:.2}", 100.0 * self.oracle_wer),
            format!("{:.2}", werr(self.baseline_wer, self.oracle_wer)),
        ]);
        render_table(&rows)
    }
}

/// Left-aligns the first column and right-aligns the rest.
pub(crate) fn render_table(rows: &[Vec<String>]) -> String {
    let n = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; n];
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(j, c)| {
                if j == 0 {
                    format!("{c:<w$}", w = widths[j])
                } else {
                    format!("{c:>w$}", w = widths[j])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * n.saturating_sub(1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rescoring::nbest::Hypothesis;

    fn fixture() -> Vec<NBestList> {
        let h = |t: &str, am: f64| Hypothesis {
            text: t.into(),
            am_score: am,
            flm_score: 0.0,
        };
        vec![
            NBestList {
                utt_id: "1".into(),
                reference: Some("book a flight to boston".into()),
                hyps: vec![h("book a fight to boston", -1.0), h("book a flight to boston", -1.2), h("look a fight", -3.0)],
            },
            NBestList {
                utt_id: "2".into(),
                reference: Some("cancel my order".into()),
                hyps: vec![h("cancel my order", -1.0), h("cancel my border", -2.0)],
            },
        ]
    }

    #[test]
    fn baseline_system_has_zero_werr() {
        let lists = fixture();
        let am_only = |_: &str| Ok(0.0);
        let report = evaluate(
            &lists,
            &[System {
                name: "am".into(),
                trainable_params: 0,
                scorer: &am_only,
                weights: RescoreWeights::new(1.0, 0.0, 0.0).unwrap(),
            }],
        )
        .unwrap();
        assert_eq!(report.systems[0].werr, 0.0);
        assert_eq!(report.systems[0].wer, report.baseline_wer);
        assert!((report.baseline_wer - 1.0 / 8.0).abs() < 1e-15);
        assert_eq!(report.oracle_wer, 0.0);
        assert_eq!(report.oracle_selections, vec![1, 0]);
        assert!(report.worst_wer >= report.baseline_wer);
        report.check_consistency(&lists).unwrap();
        let table = report.table();
        assert!(table.contains("oracle"));
        assert!(table.lines().nth(1).unwrap().starts_with("---"));
    }

    #[test]
    fn werr_formula() {
        assert!((werr(0.20, 0.18) - 10.0).abs() < 1e-12);
        assert_eq!(werr(0.0, 0.0), 0.0);
    }

    #[test]
    fn missing_reference_is_an_error() {
        let mut lists = fixture();
        lists[1].reference = None;
        assert!(matches!(evaluate(&lists, &[]), Err(Error::MissingReference(id)) if id == "2"));
    }
}
