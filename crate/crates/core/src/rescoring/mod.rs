//! Second-pass rescoring of n-best hypothesis lists and WER evaluation.

mod evaluate;
mod nbest;
mod rescore;
mod scorer;
mod wer;

pub(crate) use evaluate::render_table;
pub use evaluate::{evaluate, werr, EvalReport, System, SystemResult};
pub use nbest::{load_nbest, nbest_to_string, parse_nbest, save_nbest, Hypothesis, NBestList};
pub use rescore::{
    interpolated_score, rescore, score_nbest, select, select_all, selection_wer, tune_weights,
    RescoreWeights, ScoredUtterance, Selection,
};
pub use scorer::{ModelScorer, Scorer, ScorerPrefix};
pub use wer::{corpus_wer, edit_distance, wer, WerCounts};
