//! Template-based synthetic domains standing in for task-oriented dialog
//! data, and an n-best generator that corrupts references the way a
//! first-pass recognizer might.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::seeds::sub_seed;
use crate::rescoring::{Hypothesis, NBestList};

/// How reference transcripts are turned into competing hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionModel {
    /// Chance that a word with confusions is replaced in a variant.
    pub swap_prob: f64,
    /// Word to the words it can be misrecognized as.
    pub confusions: BTreeMap<String, Vec<String>>,
    /// Standard deviation of the Gaussian noise on both scores.
    pub score_noise: f64,
    /// Acoustic score lost per swapped word.
    pub am_penalty: f64,
    /// First-pass LM score lost per swapped word.
    pub flm_penalty: f64,
    /// Fraction of lists (at most 0.1) from which the reference is left out.
    pub missing_truth: f64,
}

impl Default for CorruptionModel {
    fn default() -> Self {
        Self {
            swap_prob: 0.35,
            confusions: BTreeMap::new(),
            score_noise: 1.0,
            am_penalty: 1.0,
            flm_penalty: 0.5,
            missing_truth: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDomainSpec {
    pub name: String,
    /// Whitespace-separated words; `{slot}` words are filled from `slots`.
    pub templates: Vec<String>,
    pub slots: BTreeMap<String, Vec<String>>,
    /// Training-corpus size.
    pub sentences: usize,
    /// Number of n-best lists to generate.
    pub eval_utterances: usize,
    pub n_hyps: usize,
    pub corruption: CorruptionModel,
    pub seed: u64,
}

/// A domain's text corpus and its evaluation n-best lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDomain {
    pub name: String,
    pub corpus: Vec<String>,
    pub nbest: Vec<NBestList>,
}

fn slot_name(word: &str) -> Option<&str> {
    word.strip_prefix('{')?.strip_suffix('}')
}

impl SyntheticDomainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("domain `{}`: {m}", self.name)));
        if self.templates.is_empty() {
            return bad("no templates".into());
        }
        if self.slots.is_empty() || self.slots.values().all(Vec::is_empty) {
            return bad("no slot values".into());
        }
        for t in &self.templates {
            for w in t.split_whitespace() {
                if let Some(s) = slot_name(w) {
                    if self.slots.get(s).is_none_or(Vec::is_empty) {
                        return bad(format!("template `{t}` uses undefined slot `{s}`"));
                    }
                }
            }
        }
        let c = &self.corruption;
        if !(0.0..=1.0).contains(&c.swap_prob) {
            return bad(format!("swap probability {} outside [0, 1]", c.swap_prob));
        }
        if !(0.0..=0.1).contains(&c.missing_truth) {
            return bad(format!("missing-truth fraction {} outside [0, 0.1]", c.missing_truth));
        }
        if !(c.score_noise >= 0.0 && c.am_penalty >= 0.0 && c.flm_penalty >= 0.0) {
            return bad("score noise and penalties must be >= 0".into());
        }
        if self.n_hyps == 0 {
            return bad("n_hyps must be >= 1".into());
        }
        Ok(())
    }

    /// One sentence from a uniformly chosen template.
    pub fn sample_sentence(&self, rng: &mut impl Rng) -> String {
        let template = self.templates.choose(rng).expect("validated: templates non-empty");
        let words: Vec<&str> = template
            .split_whitespace()
            .map(|w| match slot_name(w) {
                Some(s) => self.slots[s].choose(rng).expect("validated: slot non-empty").as_str(),
                None => w,
            })
            .collect();
        words.join(" ")
    }

    pub fn sample_corpus(&self, n: usize, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample_sentence(&mut rng)).collect()
    }
}

/// Applies the swap model once; returns the variant and its swap count.
fn corrupt(reference: &str, c: &CorruptionModel, rng: &mut impl Rng) -> (String, usize) {
    let mut swaps = 0;
    let words: Vec<String> = reference
        .split_whitespace()
        .map(|w| match c.confusions.get(w) {
            Some(alts) if !alts.is_empty() && rng.random_bool(c.swap_prob) => {
                swaps += 1;
                alts.choose(rng).expect("non-empty").clone()
            }
            _ => w.to_string(),
        })
        .collect();
    (words.join(" "), swaps)
}

/// N-best list for `reference`: the reference (unless `drop_truth`) and
/// corrupted variants, scored and sorted best first by `am + flm`.
fn nbest_for(
    utt_id: String,
    reference: &str,
    spec: &SyntheticDomainSpec,
    drop_truth: bool,
    rng: &mut impl Rng,
) -> NBestList {
    let c = &spec.corruption;
    let mut texts: Vec<(String, usize)> = Vec::with_capacity(spec.n_hyps);
    if !drop_truth {
        texts.push((reference.to_string(), 0));
    }
    let mut attempts = 0;
    while texts.len() < spec.n_hyps {
        let (v, swaps) = corrupt(reference, c, rng);
        attempts += 1;
        let fresh = swaps > 0 && !texts.iter().any(|(t, _)| *t == v);
        if fresh || attempts > 50 * spec.n_hyps {
            texts.push((v, swaps));
        }
    }
    let noise = Normal::new(0.0, c.score_noise.max(f64::MIN_POSITIVE)).expect("finite std");
    let n_words = reference.split_whitespace().count() as f64;
    let mut hyps: Vec<Hypothesis> = texts
        .into_iter()
        .map(|(text, swaps)| Hypothesis {
            text,
            am_score: -2.0 * n_words - c.am_penalty * swaps as f64 + noise.sample(rng),
            flm_score: -3.0 * n_words - c.flm_penalty * swaps as f64 + noise.sample(rng),
        })
        .collect();
    hyps.sort_by(|a, b| (b.am_score + b.flm_score).total_cmp(&(a.am_score + a.flm_score)));
    NBestList {
        utt_id,
        reference: Some(reference.to_string()),
        hyps,
    }
}

/// Draws the domain corpus and the evaluation n-best lists from named
/// sub-streams of `spec.seed`.
pub fn synthesize_domain(spec: &SyntheticDomainSpec) -> Result<SyntheticDomain> {
    spec.validate()?;
    let corpus = spec.sample_corpus(spec.sentences, sub_seed(spec.seed, "corpus"));
    let references = spec.sample_corpus(spec.eval_utterances, sub_seed(spec.seed, "eval"));
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, "corruption"));
    let n_drop = (spec.corruption.missing_truth * references.len() as f64).floor() as usize;
    let mut drop = vec![false; references.len()];
    for i in rand::seq::index::sample(&mut rng, references.len(), n_drop.min(references.len())) {
        drop[i] = true;
    }
    let nbest = references
        .iter()
        .enumerate()
        .map(|(i, r)| nbest_for(format!("{}-{i:05}", spec.name), r, spec, drop[i], &mut rng))
        .collect();
    Ok(SyntheticDomain {
        name: spec.name.clone(),
        corpus,
        nbest,
    })
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Templates used by every domain; domain identity lives in the slot values.
const SHARED_TEMPLATES: [&str; 6] = [
    "i want to {action} my {item}",
    "can you help me {action} my {item} {time}",
    "what is the status of my {item}",
    "i have a question about my {item}",
    "how much is the {item}",
    "i need to {action} the {item} i made {time}",
];

const TIMES: [&str; 6] = ["today", "tomorrow", "tonight", "next week", "this morning", "on monday"];
const ACTIONS: [&str; 5] = ["change", "cancel", "check", "confirm", "update"];

struct Flavor {
    name: &'static str,
    items: [&'static str; 6],
    templates: &'static [&'static str],
    extra_slots: &'static [(&'static str, &'static [&'static str])],
    /// Near-homophones that no domain uses.
    acoustic: &'static [(&'static str, &'static [&'static str])],
}

const FLAVORS: [Flavor; 4] = [
    Flavor {
        name: "airlines",
        items: ["flight", "seat", "booking", "ticket", "baggage", "upgrade"],
        templates: &[
            "book a flight from {place} to {place} {time}",
            "my {item} from {place} was delayed",
            "is there a window seat on the flight to {place}",
            "how many bags can i check on my {item}",
            "i missed my connection in {place}",
            "what gate does the flight to {place} leave from",
        ],
        extra_slots: &[("place", &["boston", "denver", "chicago", "seattle", "dallas", "miami"])],
        acoustic: &[
            ("flight", &["fright", "fight"]),
            ("seat", &["seed", "sheet"]),
            ("gate", &["great", "gave"]),
            ("boston", &["austin"]),
            ("bags", &["backs"]),
        ],
    },
    Flavor {
        name: "fastfood",
        items: ["order", "burger", "meal", "pizza", "drink", "salad"],
        templates: &[
            "i would like a {item} with {side}",
            "can i get extra cheese on my {item}",
            "deliver my {item} to {place} {time}",
            "do you have a vegetarian {item}",
            "add {side} to my order",
            "my {item} was cold when it arrived at {place}",
        ],
        extra_slots: &[
            ("side", &["fries", "onion rings", "coleslaw", "a cookie", "a soda"]),
            ("place", &["my house", "the office", "the drive through", "the front desk"]),
        ],
        acoustic: &[
            ("fries", &["prize", "flies"]),
            ("cheese", &["cheap", "keys"]),
            ("burger", &["murder"]),
            ("cold", &["called"]),
        ],
    },
    Flavor {
        name: "healthcare",
        items: ["appointment", "prescription", "checkup", "referral", "lab results", "vaccine"],
        templates: &[
            "i need to see {doctor} {time}",
            "can {doctor} refill my {item}",
            "my {item} was sent to {place}",
            "is {doctor} available {time}",
            "i have a fever and need an appointment {time}",
            "please send my {item} to {place}",
        ],
        extra_slots: &[
            ("doctor", &["doctor smith", "doctor patel", "the nurse", "a specialist"]),
            ("place", &["the pharmacy", "the clinic", "the lab", "the hospital"]),
        ],
        acoustic: &[
            ("fever", &["favor", "fiber"]),
            ("nurse", &["purse", "worse"]),
            ("refill", &["refile"]),
            ("clinic", &["click"]),
        ],
    },
    Flavor {
        name: "insurance",
        items: ["claim", "policy", "premium", "deductible", "coverage", "quote"],
        templates: &[
            "i want to file a {item} for my {asset}",
            "my {asset} was damaged {time}",
            "does my {item} cover my {asset}",
            "i need a new quote for my {asset}",
            "can the agent call me about my {item} {time}",
            "someone hit my {asset} in the parking lot",
        ],
        extra_slots: &[("asset", &["car", "house", "boat", "motorcycle", "apartment"])],
        acoustic: &[
            ("claim", &["clean", "climb"]),
            ("car", &["card", "far"]),
            ("damaged", &["managed"]),
            ("agent", &["urgent"]),
        ],
    },
];

/// Names of the shipped synthetic domains.
pub fn builtin_domain_names() -> Vec<&'static str> {
    FLAVORS.iter().map(|f| f.name).collect()
}

/// One of the shipped domains (`airlines`, `fastfood`, `healthcare`,
/// `insurance`). Each domain's core nouns are confusable with the nouns
/// other domains use in the same slot, plus a few near-homophones.
pub fn builtin_domain(name: &str, sentences: usize, eval_utterances: usize, seed: u64) -> Result<SyntheticDomainSpec> {
    let flavor = FLAVORS
        .iter()
        .find(|f| f.name == name)
        .ok_or_else(|| Error::Config(format!("unknown synthetic domain `{name}`")))?;
    let mut templates = strings(&SHARED_TEMPLATES);
    templates.extend(strings(flavor.templates));
    let mut slots = BTreeMap::new();
    slots.insert("item".to_string(), strings(&flavor.items));
    slots.insert("time".to_string(), strings(&TIMES));
    slots.insert("action".to_string(), strings(&ACTIONS));
    for (slot, values) in flavor.extra_slots {
        slots.insert(slot.to_string(), strings(values));
    }
    let mut confusions: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (i, item) in flavor.items.iter().enumerate() {
        // Multi-word items are left alone; swaps act on single words.
        if item.contains(' ') {
            continue;
        }
        let others = FLAVORS
            .iter()
            .filter(|f| f.name != flavor.name)
            .map(|f| f.items[i])
            .filter(|w| !w.contains(' '))
            .map(str::to_string);
        confusions.entry(item.to_string()).or_default().extend(others);
    }
    for (word, alts) in flavor.acoustic {
        confusions.entry(word.to_string()).or_default().extend(strings(alts));
    }
    Ok(SyntheticDomainSpec {
        name: name.to_string(),
        templates,
        slots,
        sentences,
        eval_utterances,
        n_hyps: 10,
        corruption: CorruptionModel {
            confusions,
            ..CorruptionModel::default()
        },
        seed: sub_seed(seed, &format!("domain/{name}")),
    })
}

const CHIT_CHAT: [&str; 10] = [
    "hello how are you",
    "thank you very much",
    "good morning",
    "i am fine thanks",
    "can you hear me",
    "that sounds good",
    "have a nice day",
    "yes please",
    "no thank you",
    "what time is it",
];

/// Pretraining text. Each line is a session of 1 to `session_len`
/// consecutive sentences from one source (a domain or chit-chat), so the
/// model sees sentences at many positions and after same-domain context.
/// `per_domain` sentences are drawn from each domain on a stream separate
/// from the domain corpora, plus `chit_chat` chit-chat sentences.
pub fn generic_corpus(
    specs: &[SyntheticDomainSpec],
    per_domain: usize,
    chit_chat: usize,
    session_len: usize,
    seed: u64,
) -> Vec<String> {
    let mut sources: Vec<Vec<String>> = specs
        .iter()
        .map(|s| s.sample_corpus(per_domain, sub_seed(seed, &format!("generic/{}", s.name))))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "generic/chit-chat"));
    sources.push(
        (0..chit_chat)
            .map(|_| CHIT_CHAT.choose(&mut rng).expect("non-empty").to_string())
            .collect(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "generic/sessions"));
    let mut sessions = Vec::new();
    for source in &sources {
        let mut rest = source.as_slice();
        while !rest.is_empty() {
            let n = rng.random_range(1..=session_len.max(1)).min(rest.len());
            sessions.push(rest[..n].join(" "));
            rest = &rest[n..];
        }
    }
    use rand::seq::SliceRandom;
    sessions.shuffle(&mut rng);
    sessions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rescoring::{nbest_to_string, parse_nbest};

    #[test]
    fn builtin_domains_validate() {
        for name in builtin_domain_names() {
            let spec = builtin_domain(name, 10, 5, 1).unwrap();
            spec.validate().unwrap();
            assert!(spec.corruption.confusions.contains_key(FLAVORS[0].items[0]) || name != "airlines");
        }
        assert!(builtin_domain("banking", 1, 1, 0).is_err());
    }

    #[test]
    fn zero_swap_probability_gives_reference_only_lists() {
        let mut spec = builtin_domain("airlines", 20, 30, 3).unwrap();
        spec.corruption.swap_prob = 0.0;
        let d = synthesize_domain(&spec).unwrap();
        for l in &d.nbest {
            assert_eq!(l.hyps.len(), 10);
            assert!(l.hyps.iter().all(|h| Some(&h.text) == l.reference.as_ref()));
        }
    }

    #[test]
    fn deterministic_and_round_trips() {
        let spec = builtin_domain("insurance", 50, 40, 9).unwrap();
        let a = synthesize_domain(&spec).unwrap();
        let b = synthesize_domain(&spec).unwrap();
        let text = nbest_to_string(&a.nbest).unwrap();
        assert_eq!(text, nbest_to_string(&b.nbest).unwrap());
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(parse_nbest(&text).unwrap(), a.nbest);
    }

    #[test]
    fn truth_mostly_present_but_not_always_first() {
        let spec = builtin_domain("fastfood", 10, 400, 4).unwrap();
        let d = synthesize_domain(&spec).unwrap();
        let present = d
            .nbest
            .iter()
            .filter(|l| l.hyps.iter().any(|h| Some(&h.text) == l.reference.as_ref()))
            .count();
        let first = d
            .nbest
            .iter()
            .filter(|l| Some(&l.hyps[0].text) == l.reference.as_ref())
            .count();
        assert!(present as f64 >= 0.9 * d.nbest.len() as f64);
        assert!(first < d.nbest.len());
    }

    #[test]
    fn degenerate_specs_rejected() {
        let mut spec = builtin_domain("airlines", 1, 1, 0).unwrap();
        spec.slots.clear();
        assert!(synthesize_domain(&spec).is_err());
        let mut spec = builtin_domain("airlines", 1, 1, 0).unwrap();
        spec.corruption.swap_prob = 1.5;
        assert!(spec.validate().is_err());
        let mut spec = builtin_domain("airlines", 1, 1, 0).unwrap();
        spec.templates.clear();
        assert!(spec.validate().is_err());
    }
}
