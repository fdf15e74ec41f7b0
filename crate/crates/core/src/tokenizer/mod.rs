//! Word-level vocabulary and corpus frequency statistics.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const RESERVED: usize = 3;

const RESERVED_TOKENS: [&str; RESERVED] = ["<pad>", "<unk>", "<bos>"];

/// Token ids of one encoded utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub utt_id: Option<String>,
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { utt_id: None, ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Text ↔ id mapping used by the language model.
pub trait Tokenizer {
    fn encode(&self, text: &str) -> TokenSequence;
    fn decode(&self, ids: &[usize]) -> Result<String>;
    fn vocab_size(&self) -> usize;
    fn token_id(&self, token: &str) -> Option<usize>;
}

/// Lowercased whitespace words.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Word counts sorted by descending frequency, ties lexicographic.
pub fn ranked_frequencies<S: AsRef<str>>(corpus: &[S]) -> Vec<(String, usize)> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in corpus {
        for w in words(line.as_ref()) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// The `k` most frequent words; cycles from the top when the corpus has
/// fewer than `k` distinct words.
pub fn top_k_frequent<S: AsRef<str>>(corpus: &[S], k: usize) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let ranked = ranked_frequencies(corpus);
    if ranked.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    Ok(ranked
        .iter()
        .cycle()
        .take(k)
        .map(|(w, _)| w.clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    /// Frequency-ranked vocabulary of at most `max_size` entries, reserved ids included.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Self> {
        let ranked = ranked_frequencies(corpus);
        if ranked.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        if max_size < RESERVED {
            return Err(Error::Config(format!(
                "vocabulary size {max_size} cannot hold the {RESERVED} reserved tokens"
            )));
        }
        Self::from_tokens(
            ranked
                .into_iter()
                .take(max_size - RESERVED)
                .map(|(w, _)| w)
                .collect(),
        )
    }

    /// Vocabulary whose non-reserved entries are `tokens` in id order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut all: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.into_iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format {
                    what: "vocabulary",
                    message: format!("entry {} is not a single word", i + RESERVED),
                });
            }
            if RESERVED_TOKENS.contains(&t.as_str()) || ids.insert(t.clone(), i + RESERVED).is_some()
            {
                return Err(Error::Format {
                    what: "vocabulary",
                    message: format!("duplicate token `{t}`"),
                });
            }
            all.push(t);
        }
        Ok(Self { ids, tokens: all })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED..]
    }

    /// One token per line; line `n` holds id `n + 3`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in self.words() {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_file_string(&text)
    }
}

impl Tokenizer for Vocab {
    fn encode(&self, text: &str) -> TokenSequence {
        TokenSequence::new(
            words(text)
                .map(|w| self.ids.get(&w).copied().unwrap_or(UNK_ID))
                .collect(),
        )
    }

    fn decode(&self, ids: &[usize]) -> Result<String> {
        let words = ids
            .iter()
            .map(|&id| {
                self.token(id).ok_or(Error::IndexOutOfRange {
                    index: id,
                    len: self.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }

    fn vocab_size(&self) -> usize {
        self.len()
    }

    fn token_id(&self, token: &str) -> Option<usize> {
        self.ids.get(&token.to_lowercase()).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frequency_order() {
        let v = Vocab::build(&["a a b"], 10).unwrap();
        assert_eq!(v.token_id("a"), Some(3));
        assert_eq!(v.token_id("b"), Some(4));
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn truncation_keeps_reserved_slots() {
        let v = Vocab::build(&["b a", "a"], 4).unwrap();
        assert_eq!(v.words(), &["a".to_string()]);
        assert_eq!(v.token_id("b"), None);
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = Vocab::build(&["x y", "y x"], 10).unwrap();
        assert!(v.token_id("x").unwrap() < v.token_id("y").unwrap());
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            Vocab::build::<&str>(&[], 10),
            Err(Error::Empty(_))
        ));
        assert!(Vocab::build(&["   "], 10).is_err());
        assert!(top_k_frequent(&["  "], 2).is_err());
    }

    #[test]
    fn encode_folds_case_and_maps_unknowns() {
        let v = Vocab::build(&["hello world"], 10).unwrap();
        let seq = v.encode("Hello WORLD");
        assert_eq!(seq.ids, vec![v.token_id("hello").unwrap(), v.token_id("world").unwrap()]);
        let seq = v.encode("hello zzz");
        assert_eq!(seq.ids, vec![v.token_id("hello").unwrap(), UNK_ID]);
        assert_eq!(v.decode(&v.encode("a b a").ids).unwrap(), "<unk> <unk> <unk>");
        let v = Vocab::build(&["a b"], 10).unwrap();
        assert_eq!(v.decode(&v.encode("a b a").ids).unwrap(), "a b a");
    }

    #[test]
    fn decode_out_of_range() {
        let v = Vocab::build(&["a"], 10).unwrap();
        assert!(matches!(
            v.decode(&[9]),
            Err(Error::IndexOutOfRange { index: 9, .. })
        ));
    }

    #[test]
    fn top_k_examples() {
        let c = ["flight flight refund"];
        assert_eq!(top_k_frequent(&c, 1).unwrap(), vec!["flight"]);
        assert_eq!(top_k_frequent(&c, 2).unwrap(), vec!["flight", "refund"]);
        assert_eq!(
            top_k_frequent(&["flight refund"], 5).unwrap(),
            vec!["flight", "refund", "flight", "refund", "flight"]
        );
        assert!(top_k_frequent(&c, 0).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = Vocab::build(&["the cat sat on the mat"], 100).unwrap();
        let text = v.to_file_string();
        assert_eq!(text.lines().next(), Some("the"));
        assert_eq!(Vocab::from_file_string(&text).unwrap(), v);
        assert!(Vocab::from_file_string("a\na\n").is_err());
        assert!(Vocab::from_file_string("<bos>\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_on_in_vocab_text(words in prop::collection::vec("[a-z]{1,5}", 1..12)) {
            let text = words.join(" ");
            let v = Vocab::build(&[text.as_str()], 1000).unwrap();
            let ids = v.encode(&text).ids;
            prop_assert!(ids.iter().all(|&i| i >= RESERVED));
            prop_assert_eq!(v.decode(&ids).unwrap(), text);
        }

        #[test]
        fn top_k_ignores_line_order(
            lines in prop::collection::vec("[a-d]{1,2}( [a-d]{1,2}){0,4}", 1..8),
            k in 1usize..10,
            seed in any::<u64>(),
        ) {
            let mut shuffled = lines.clone();
            let n = shuffled.len();
            for i in 0..n {
                let j = (seed as usize).wrapping_add(i * 7) % n;
                shuffled.swap(i, j);
            }
            prop_assert_eq!(top_k_frequent(&lines, k).unwrap(), top_k_frequent(&shuffled, k).unwrap());
        }
    }
}
