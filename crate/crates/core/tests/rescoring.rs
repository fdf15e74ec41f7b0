mod common;

use std::collections::HashMap;

use common::{fixture_vocab, tiny_model, SENTENCES};
use domprompt::rescoring::{
    evaluate, parse_nbest, rescore, select, selection_wer, wer, Hypothesis, ModelScorer, NBestList,
    RescoreWeights, Scorer, ScorerPrefix, System,
};
use domprompt::numerics::Matrix;
use proptest::prelude::*;

/// Edit distance by memoized recursion over suffixes.
fn oracle_distance(a: &[String], b: &[String]) -> usize {
    fn go(a: &[String], b: &[String], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let sub = go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]);
        let del = go(a, b, i + 1, j, memo) + 1;
        let ins = go(a, b, i, j + 1, memo) + 1;
        let v = sub.min(del).min(ins);
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(String::from), 0..=10)
}

fn list_strategy() -> impl Strategy<Value = NBestList> {
    (
        prop::collection::vec("[a-c]{1,2}", 1..5),
        prop::collection::vec((prop::collection::vec("[a-c]{1,2}", 0..5), -5.0..0.0f64, -5.0..0.0f64), 1..6),
    )
        .prop_map(|(reference, hyps)| NBestList {
            utt_id: "u".into(),
            reference: Some(reference.join(" ")),
            hyps: hyps
                .into_iter()
                .map(|(w, am, flm)| Hypothesis {
                    text: w.join(" "),
                    am_score: am,
                    flm_score: flm,
                })
                .collect(),
        })
}

proptest! {
    #[test]
    fn wer_matches_recursive_oracle(r in words(), h in words()) {
        prop_assume!(!r.is_empty());
        let expected = oracle_distance(&r, &h) as f64 / r.len() as f64;
        prop_assert_eq!(wer(&r.join(" "), &h.join(" ")).unwrap(), expected);
    }

    #[test]
    fn wer_is_zero_only_for_identity(r in words(), h in words()) {
        prop_assume!(!r.is_empty());
        let w = wer(&r.join(" "), &h.join(" ")).unwrap();
        prop_assert_eq!(w == 0.0, r == h);
        prop_assert!(w <= (r.len().max(h.len()) as f64) / r.len() as f64);
    }

    #[test]
    fn oracle_never_loses(lists in prop::collection::vec(list_strategy(), 1..6), lm in prop::collection::vec(-10.0..0.0f64, 6)) {
        let scorer = |t: &str| Ok(lm[t.len() % lm.len()]);
        let system = System {
            name: "lm".into(),
            trainable_params: 0,
            scorer: &scorer,
            weights: RescoreWeights::default(),
        };
        let report = evaluate(&lists, &[system]).unwrap();
        prop_assert!(report.oracle_wer <= report.systems[0].wer);
        prop_assert!(report.oracle_wer <= report.baseline_wer);
        prop_assert!(report.systems[0].wer <= report.worst_wer);
        report.check_consistency(&lists).unwrap();
    }

    #[test]
    fn uniform_weight_scaling_keeps_selections(list in list_strategy(), lm in prop::collection::vec(-10.0..0.0f64, 6), c in 0.01..100.0f64) {
        let lm = &lm[..list.hyps.len().min(lm.len())];
        prop_assume!(lm.len() == list.hyps.len());
        let w = RescoreWeights::new(1.0, 0.7, 0.4).unwrap();
        let scaled = RescoreWeights::new(c, 0.7 * c, 0.4 * c).unwrap();
        prop_assert_eq!(select(&list, lm, &w), select(&list, lm, &scaled));
    }
}

#[test]
fn am_only_weights_reproduce_the_first_pass() {
    let lists = parse_nbest(
        r#"{"utt_id":"1","ref":"a b","hyps":[{"text":"a b","am_score":-1,"flm_score":-9},{"text":"a c","am_score":-2,"flm_score":0}]}
{"utt_id":"2","ref":"c","hyps":[{"text":"d","am_score":-1,"flm_score":0},{"text":"c","am_score":-1.5,"flm_score":0}]}"#,
    )
    .unwrap();
    let zero = |_: &str| Ok(0.0);
    let sel = rescore(&lists, &zero, &RescoreWeights::new(1.0, 0.0, 0.0).unwrap());
    assert_eq!(sel.iter().map(|s| s.index).collect::<Vec<_>>(), vec![0, 0]);
    assert_eq!(selection_wer(&lists, [0, 0]).unwrap(), 1.0 / 3.0);
    assert_eq!(selection_wer(&lists, [0, 1]).unwrap(), 0.0);
}

#[test]
fn failing_scorer_falls_back_to_first_hypothesis() {
    let lists = parse_nbest(
        r#"{"utt_id":"1","ref":"a","hyps":[{"text":"b","am_score":-1,"flm_score":0},{"text":"a","am_score":-1,"flm_score":0}]}"#,
    )
    .unwrap();
    let broken = |_: &str| Err(domprompt::error::Error::Config("scorer offline".into()));
    let sel = rescore(&lists, &broken, &RescoreWeights::default());
    assert_eq!(sel[0].index, 0);
    assert!(sel[0].error.as_deref().unwrap().contains("offline"));
}

#[test]
fn cached_and_uncached_scoring_select_identically() {
    let vocab = fixture_vocab();
    let model = tiny_model(vocab.len(), 12);
    let prompt = Matrix::from_fn(3, 16, |r, c| ((r * 16 + c) as f64 * 0.37).sin() * 0.3);
    let cache = model.prefix_cache_from_rows(&prompt).unwrap();
    let rows = ModelScorer::new(&model, &vocab).with_prefix(ScorerPrefix::Rows(prompt));
    let cached = ModelScorer::new(&model, &vocab).with_prefix(ScorerPrefix::Cached(cache));
    let lists: Vec<NBestList> = SENTENCES
        .iter()
        .enumerate()
        .map(|(i, s)| NBestList {
            utt_id: i.to_string(),
            reference: Some(s.to_string()),
            hyps: SENTENCES
                .iter()
                .map(|h| Hypothesis {
                    text: h.to_string(),
                    am_score: -1.0,
                    flm_score: -1.0,
                })
                .collect(),
        })
        .collect();
    for l in &lists {
        for h in &l.hyps {
            let a = rows.lm_logprob(&h.text).unwrap();
            let b = cached.lm_logprob(&h.text).unwrap();
            assert!((a - b).abs() <= 1e-9 * a.abs());
        }
    }
    let w = RescoreWeights::default();
    let a: Vec<usize> = rescore(&lists, &rows, &w).iter().map(|s| s.index).collect();
    let b: Vec<usize> = rescore(&lists, &cached, &w).iter().map(|s| s.index).collect();
    assert_eq!(a, b);
}
