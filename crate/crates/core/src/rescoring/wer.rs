use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::words;

/// Levenshtein distance with unit substitution, deletion and insertion costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word edits and reference length of one (reference, hypothesis) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WerCounts {
    pub edits: usize,
    pub ref_words: usize,
}

impl WerCounts {
    /// Lowercased whitespace-word edit counts. Errors on an empty reference.
    pub fn of(reference: &str, hypothesis: &str) -> Result<Self> {
        let r: Vec<String> = words(reference).collect();
        if r.is_empty() {
            return Err(Error::Empty("reference transcript"));
        }
        let h: Vec<String> = words(hypothesis).collect();
        Ok(Self {
            edits: edit_distance(&r, &h),
            ref_words: r.len(),
        })
    }

    pub fn rate(&self) -> f64 {
        if self.ref_words == 0 {
            0.0
        } else {
            self.edits as f64 / self.ref_words as f64
        }
    }
}

impl std::ops::Add for WerCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            edits: self.edits + o.edits,
            ref_words: self.ref_words + o.ref_words,
        }
    }
}

impl std::iter::Sum for WerCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// Word error rate of one hypothesis.
pub fn wer(reference: &str, hypothesis: &str) -> Result<f64> {
    Ok(WerCounts::of(reference, hypothesis)?.rate())
}

/// Corpus WER: total edits over total reference words.
pub fn corpus_wer<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)]) -> Result<f64> {
    let total: WerCounts = pairs
        .iter()
        .map(|(r, h)| WerCounts::of(r.as_ref(), h.as_ref()))
        .sum::<Result<WerCounts>>()?;
    Ok(total.rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(wer("hello world", "hello world").unwrap(), 0.0);
        assert!((wer("a b c", "a x c").unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(wer("a b", "a x y").unwrap(), 1.0);
        assert_eq!(wer("A B", "a b").unwrap(), 0.0);
        assert!(wer("", "a").is_err());
        assert!(wer("   ", "a").is_err());
    }

    #[test]
    fn corpus_rate_pools_counts() {
        let pairs = [("a b c d", "a b c d"), ("x y", "x")];
        assert!((corpus_wer(&pairs).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn edit_distance_edges() {
        let e: [u8; 0] = [];
        assert_eq!(edit_distance(&e, &e), 0);
        assert_eq!(edit_distance(&[1, 2, 3], &e), 3);
        assert_eq!(edit_distance(&e, &[1, 2]), 2);
        assert_eq!(edit_distance(&[1, 2, 3], &[2, 3, 1]), 2);
    }
}
