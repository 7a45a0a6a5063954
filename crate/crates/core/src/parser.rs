//! Answer extraction from free-text chains of thought.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::task::{OptionKey, TaskSpec, PROMPT_SEPARATOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    NoAnswerPhrase,
    LabelNotInOptions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedCoT {
    /// The chain of thought with the trailing answer clause removed, trimmed.
    pub rationale_text: String,
    pub predicted_label: Option<OptionKey>,
    pub parse_status: ParseStatus,
}

impl ParsedCoT {
    pub fn is_ok(&self) -> bool {
        self.parse_status == ParseStatus::Ok
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("rationale contains the prompt separator")]
    SeparatorInRationale,
    #[error("rationale is empty")]
    EmptyRationale,
    #[error("label {0:?} is not an option key of the task")]
    UnknownLabel(String),
}

/// Builds a case-insensitive pattern for the answer phrase that tolerates
/// whitespace runs between words and an optional trailing colon.
fn phrase_pattern(phrase: &str) -> Regex {
    static CACHE: OnceLock<Mutex<HashMap<String, Regex>>> = OnceLock::new();
    let mut cache = CACHE.get_or_init(Default::default).lock().unwrap_or_else(|p| p.into_inner());
    cache
        .entry(phrase.to_string())
        .or_insert_with(|| compile_phrase(phrase))
        .clone()
}

fn compile_phrase(phrase: &str) -> Regex {
    let core = phrase.trim().trim_end_matches(':').trim();
    let words: Vec<String> = core.split_whitespace().map(regex::escape).collect();
    let body = words.join(r"\s+");
    let lead = if core.chars().next().is_some_and(|c| c.is_alphanumeric()) {
        r"\b"
    } else {
        ""
    };
    Regex::new(&format!(r"(?i){lead}{body}\s*:?")).expect("escaped phrase is a valid regex")
}

fn label_token() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*(?:\(\s*([^\s()]+?)\s*\)|([^\s().,;:!?\x22'\]\[]+))").unwrap()
    })
}

/// Extracts the predicted label from the last occurrence of the task's
/// answer phrase. The first token after the phrase, written `(k)` or `k`,
/// is the label.
pub fn parse_cot(raw: &str, task: &TaskSpec) -> ParsedCoT {
    let pattern = phrase_pattern(&task.answer_phrase);
    let Some(m) = pattern.find_iter(raw).last() else {
        return ParsedCoT {
            rationale_text: raw.trim().to_string(),
            predicted_label: None,
            parse_status: ParseStatus::NoAnswerPhrase,
        };
    };
    let rationale_text = raw[..m.start()].trim().to_string();
    let tail = &raw[m.end()..];
    let label = label_token()
        .captures(tail)
        .and_then(|c| c.get(1).or_else(|| c.get(2)))
        .and_then(|tok| task.key(tok.as_str()).cloned());
    match label {
        Some(key) => ParsedCoT {
            rationale_text,
            predicted_label: Some(key),
            parse_status: ParseStatus::Ok,
        },
        None => ParsedCoT {
            rationale_text,
            predicted_label: None,
            parse_status: ParseStatus::LabelNotInOptions,
        },
    }
}

/// `"{rationale} {answer_phrase} ({label})"`, the inverse of [`parse_cot`].
pub fn render_target(rationale: &str, label: &OptionKey, task: &TaskSpec) -> Result<String, RenderError> {
    if !task.has_key(label) {
        return Err(RenderError::UnknownLabel(label.to_string()));
    }
    if rationale.contains(PROMPT_SEPARATOR) {
        return Err(RenderError::SeparatorInRationale);
    }
    let rationale = rationale.trim();
    if rationale.is_empty() {
        return Err(RenderError::EmptyRationale);
    }
    Ok(format!("{rationale} {}", render_answer(label, task)))
}

/// `"{answer_phrase} ({label})"` with no rationale.
pub fn render_answer(label: &OptionKey, task: &TaskSpec) -> String {
    format!("{} ({label})", task.answer_phrase.trim())
}
