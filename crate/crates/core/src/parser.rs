//! Splitting model output into per-question answers.
//!
//! A response is a sequence of blocks introduced by `Answer k:` headers
//! (case-insensitive; markdown emphasis or heading marks around the header are
//! ignored). With reasoning enabled a block holds a reason line and an answer
//! line; without it, just the answer line.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Label, Task};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerValue {
    Boolean(bool),
    Value(String),
}

impl From<AnswerValue> for Label {
    fn from(v: AnswerValue) -> Self {
        match v {
            AnswerValue::Boolean(b) => Label::Boolean(b),
            AnswerValue::Value(s) => Label::Value(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub question_index: usize,
    pub reason: Option<String>,
    pub raw_answer: String,
    /// `None` when the raw answer could not be normalized (e.g. neither yes nor no).
    pub normalized: Option<AnswerValue>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseFailure {
    #[error("missing answers for questions {indices:?}")]
    MissingAnswers { indices: Vec<usize> },
    #[error("answers for questions that were not asked: {indices:?}")]
    ExtraAnswers { indices: Vec<usize> },
    #[error("question {index} answered more than once")]
    DuplicateAnswer { index: usize },
    #[error("answer {index} cannot be parsed: {reason}")]
    UnparseableBlock { index: usize, reason: String },
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum NormalizeError {
    #[error("answer `{0}` is neither a clear yes nor a clear no")]
    AmbiguousBoolean(String),
    #[error("answer is empty")]
    EmptyAnswer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOptions {
    pub reasoning_enabled: bool,
    /// Reject blocks that do not have exactly the expected number of lines
    /// instead of tolerating them with a warning.
    pub strict: bool,
}

fn header_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?mi)^[ \t]*(?:[#>*_]+[ \t]*)*answer[ \t]*([0-9]{1,6})[ \t]*[*_]*[ \t]*:(?:[ \t]*[*_]+)?",
        )
        .expect("header regex compiles")
    })
}

/// Tolerant parse; see [`parse_batch_response_with`].
pub fn parse_batch_response(
    content: &str,
    expected: usize,
    task: &Task,
    reasoning_enabled: bool,
) -> Result<Vec<ParsedAnswer>, ParseFailure> {
    parse_batch_response_with(
        content,
        expected,
        task,
        ParseOptions {
            reasoning_enabled,
            strict: false,
        },
    )
}

pub fn parse_batch_response_with(
    content: &str,
    expected: usize,
    task: &Task,
    options: ParseOptions,
) -> Result<Vec<ParsedAnswer>, ParseFailure> {
    let headers: Vec<_> = header_regex().captures_iter(content).collect();
    let mut blocks: BTreeMap<usize, &str> = BTreeMap::new();
    for (i, caps) in headers.iter().enumerate() {
        let whole = caps.get(0).expect("group 0 always matches");
        let index: usize = caps[1].parse().expect("at most six ascii digits");
        let end = headers
            .get(i + 1)
            .map_or(content.len(), |next| next.get(0).unwrap().start());
        if blocks.insert(index, &content[whole.end()..end]).is_some() {
            return Err(ParseFailure::DuplicateAnswer { index });
        }
    }

    let missing: Vec<usize> = (1..=expected).filter(|k| !blocks.contains_key(k)).collect();
    if !missing.is_empty() {
        return Err(ParseFailure::MissingAnswers { indices: missing });
    }
    let extra: Vec<usize> = blocks
        .keys()
        .copied()
        .filter(|k| *k == 0 || *k > expected)
        .collect();
    if !extra.is_empty() {
        return Err(ParseFailure::ExtraAnswers { indices: extra });
    }

    blocks
        .into_iter()
        .map(|(index, block)| parse_block(index, block, task, options))
        .collect()
}

fn parse_block(
    index: usize,
    block: &str,
    task: &Task,
    options: ParseOptions,
) -> Result<ParsedAnswer, ParseFailure> {
    let lines: Vec<&str> = block
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let wanted = if options.reasoning_enabled { 2 } else { 1 };
    let Some((answer, reason_lines)) = lines.split_last() else {
        return Err(ParseFailure::UnparseableBlock {
            index,
            reason: "empty block".into(),
        });
    };
    if lines.len() != wanted {
        let message = format!("expected {wanted} lines, found {}", lines.len());
        if options.strict {
            return Err(ParseFailure::UnparseableBlock {
                index,
                reason: message,
            });
        }
        log::warn!("answer {index}: {message}; tolerated");
    }
    let reason = (!reason_lines.is_empty()).then(|| reason_lines.join(" "));
    Ok(ParsedAnswer {
        question_index: index,
        reason,
        raw_answer: (*answer).to_owned(),
        normalized: normalize_answer(answer, task).ok(),
    })
}

const QUOTE_PAIRS: [(&str, &str); 6] = [
    ("\"", "\""),
    ("'", "'"),
    ("\u{201c}", "\u{201d}"),
    ("\u{2018}", "\u{2019}"),
    ("`", "`"),
    ("**", "**"),
];

fn strip_wrappers(raw: &str) -> &str {
    let mut s = raw.trim();
    loop {
        let before = s;
        for (open, close) in QUOTE_PAIRS {
            if s.len() >= open.len() + close.len() && s.starts_with(open) && s.ends_with(close) {
                s = s[open.len()..s.len() - close.len()].trim();
            }
        }
        if s == before {
            return s;
        }
    }
}

pub fn normalize_answer(raw: &str, task: &Task) -> Result<AnswerValue, NormalizeError> {
    if !task.kind().is_boolean() {
        let value = strip_wrappers(raw);
        if value.is_empty() {
            return Err(NormalizeError::EmptyAnswer);
        }
        return Ok(AnswerValue::Value(value.to_owned()));
    }

    let lowered = raw.trim().to_lowercase();
    let text = lowered
        .trim_matches(|c: char| matches!(c, '*' | '_' | '`' | '"' | '\''))
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .trim();
    if text.is_empty() {
        return Err(NormalizeError::EmptyAnswer);
    }
    let mut words = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty());
    match words.clone().next() {
        Some("yes") => return Ok(AnswerValue::Boolean(true)),
        Some("no") => return Ok(AnswerValue::Boolean(false)),
        _ => {}
    }
    let has_yes = words.clone().any(|w| w == "yes");
    let has_no = words.any(|w| w == "no");
    match (has_yes, has_no) {
        (true, false) => Ok(AnswerValue::Boolean(true)),
        (false, true) => Ok(AnswerValue::Boolean(false)),
        _ => Err(NormalizeError::AmbiguousBoolean(raw.to_owned())),
    }
}
