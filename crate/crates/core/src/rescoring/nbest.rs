use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// One first-pass hypothesis with its log-domain scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: String,
    pub am_score: f64,
    pub flm_score: f64,
}

/// The n best first-pass hypotheses of one utterance, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestList {
    pub utt_id: String,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub hyps: Vec<Hypothesis>,
}

impl NBestList {
    pub fn validate(&self) -> Result<()> {
        if self.hyps.is_empty() {
            return Err(Error::Empty("hypothesis list"));
        }
        if self
            .hyps
            .iter()
            .any(|h| !h.am_score.is_finite() || !h.flm_score.is_finite())
        {
            return Err(Error::NonFinite("hypothesis scores"));
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

fn require<'v>(obj: &'v Value, field: &str, line: usize) -> Result<&'v Value> {
    obj.get(field).ok_or_else(|| Error::MissingField {
        line,
        field: field.to_string(),
    })
}

fn parse_line(text: &str, line: usize) -> Result<NBestList> {
    let parse_err = |message: String| Error::Parse { line, message };
    let value: Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    if !value.is_object() {
        return Err(parse_err("expected a JSON object".into()));
    }
    require(&value, "utt_id", line)?;
    let hyps = require(&value, "hyps", line)?
        .as_array()
        .ok_or_else(|| parse_err("`hyps` must be an array".into()))?;
    if hyps.is_empty() {
        return Err(parse_err("empty hypothesis list".into()));
    }
    for h in hyps {
        for field in ["text", "am_score", "flm_score"] {
            require(h, field, line)?;
        }
    }
    let list: NBestList = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
    list.validate().map_err(|e| parse_err(e.to_string()))?;
    Ok(list)
}

/// Parses the JSON-lines n-best format; blank lines are skipped and line
/// numbers in errors are 1-based.
pub fn parse_nbest(text: &str) -> Result<Vec<NBestList>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1))
        .collect()
}

pub fn load_nbest(path: &Path) -> Result<Vec<NBestList>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_nbest(&text)
}

pub fn nbest_to_string(lists: &[NBestList]) -> Result<String> {
    let mut out = String::new();
    for l in lists {
        out.push_str(&l.to_json_line()?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_nbest(path: &Path, lists: &[NBestList]) -> Result<()> {
    fs::write(path, nbest_to_string(lists)?).map_err(|e| Error::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"{"utt_id":"u1","ref":"book a flight","hyps":[{"text":"book a flight","am_score":-1.0,"flm_score":-2.0},{"text":"book a fight","am_score":-1.5,"flm_score":-2.5}]}
{"utt_id":"u2","hyps":[{"text":"hello","am_score":-0.5,"flm_score":-1.0}]}
"#;

    #[test]
    fn two_utterances() {
        let lists = parse_nbest(TWO).unwrap();
        assert_eq!(lists.len(), 2);
        assert_eq!(lists[0].hyps.len(), 2);
        assert_eq!(lists[0].hyps[1].text, "book a fight");
        assert_eq!(lists[0].reference.as_deref(), Some("book a flight"));
        assert_eq!(lists[1].reference, None);
        assert_eq!(parse_nbest(&nbest_to_string(&lists).unwrap()).unwrap(), lists);
    }

    #[test]
    fn missing_am_score_names_field_and_line() {
        let text = "\n{\"utt_id\":\"u\",\"hyps\":[{\"text\":\"a\",\"flm_score\":0}]}";
        match parse_nbest(text) {
            Err(Error::MissingField { line, field }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "am_score");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_empty_lists() {
        assert!(matches!(parse_nbest("{nope"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_nbest(r#"{"utt_id":"u","hyps":[]}"#),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_nbest(r#"{"hyps":[]}"#),
            Err(Error::MissingField { line: 1, .. })
        ));
    }

    #[test]
    fn ten_hypotheses_accepted() {
        let hyps: Vec<String> = (0..10)
            .map(|i| format!(r#"{{"text":"h{i}","am_score":{},"flm_score":-1}}"#, -(i as f64)))
            .collect();
        let line = format!(r#"{{"utt_id":"u","hyps":[{}]}}"#, hyps.join(","));
        let lists = parse_nbest(&line).unwrap();
        assert_eq!(lists[0].hyps.len(), 10);
        assert_eq!(lists[0].hyps[9].text, "h9");
    }
}
