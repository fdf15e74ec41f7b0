// Word error rate: per-utterance edit counts, corpus WER and WER reduction.

use anyhow::Result;
use domprompt::rescoring::{corpus_wer, edit_distance, wer, werr, WerCounts};

pub fn run_example() -> Result<()> {
    let pairs = [
        ("book a flight to boston", "book a fight to boston"),
        ("cancel my order", "cancel my order"),
        ("what is my deductible", "what is deductible please"),
        ("I need a refill", "i need a refill"),
    ];
    println!("{:<28} {:<28} {:>5} {:>7}", "reference", "hypothesis", "edits", "WER %");
    let mut total = WerCounts::default();
    for (r, h) in pairs {
        let c = WerCounts::of(r, h)?;
        println!("{r:<28} {h:<28} {:>5} {:>7.1}", c.edits, 100.0 * wer(r, h)?);
        total = total + c;
    }
    let corpus = corpus_wer(&pairs)?;
    println!("corpus: {} edits / {} words = {:.2}%", total.edits, total.ref_words, 100.0 * corpus);

    let rescored = corpus_wer(&[
        ("book a flight to boston", "book a flight to boston"),
        ("cancel my order", "cancel my order"),
        ("what is my deductible", "what is deductible please"),
        ("I need a refill", "i need a refill"),
    ])?;
    println!("after rescoring: {:.2}% (WERR {:.1}%)", 100.0 * rescored, werr(corpus, rescored));

    let chars = |s: &str| s.chars().collect::<Vec<_>>();
    println!("character edits kitten -> sitting: {}", edit_distance(&chars("kitten"), &chars("sitting")));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
