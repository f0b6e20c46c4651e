//! Structured-output parsing for model answers.
//!
//! Two grammars are accepted:
//!
//! * tagged: a verdict line followed by
//!   `<result><target>..</target><explanation>..</explanation></result>`
//!   (Chinese tag names `讽刺对象` / `讽刺解释` also work);
//! * labeled fields: `是否讽刺: 是; 讽刺对象: ..; 讽刺解释: ..` or the
//!   English `sarcastic: yes; target: ..; explanation: ..`.
//!
//! A negative verdict may stand alone ("no sarcasm", "无讽刺"). Tag contents
//! are trimmed and XML-unescaped (`&lt; &gt; &amp;`).

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::data::ParsedResponse;
use crate::prompt::Language;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    #[default]
    Lenient,
    /// Only the tagged form is accepted.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("no sarcasm verdict found")]
    MissingVerdict,
    #[error("sarcastic verdict without a {0} field")]
    MissingField(&'static str),
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

fn result_block() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"(?s)<result>(.*?)</result>")
}

fn target_tag() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"(?s)<(target|讽刺对象)>(.*?)</(?:target|讽刺对象)>")
}

fn explanation_tag() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(
        &R,
        r"(?s)<(explanation|讽刺解释)>(.*?)</(?:explanation|讽刺解释)>",
    )
}

fn verdict_field() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(
        &R,
        r"(?i)(?:是否讽刺|是否含有讽刺|is[ _]sarcastic|sarcastic|sarcasm)\s*[:：]\s*(yes|no|true|false|y|n|1|0|是|否)\b",
    )
}

fn negative_phrase() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(
        &R,
        r"(?i)\b(?:no sarcasm|not sarcastic|non-sarcastic|contains no sarcasm)\b|无讽刺|不含讽刺|没有讽刺|不是讽刺|非讽刺",
    )
}

fn field_label() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(
        &R,
        r"(?i)(讽刺对象|讽刺解释|\btarget|\bexplanation)\s*[:：]",
    )
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&")
}

fn verdict(text: &str) -> Option<bool> {
    if let Some(c) = verdict_field().captures(text) {
        let v = c[1].to_lowercase();
        return Some(matches!(v.as_str(), "yes" | "true" | "y" | "1" | "是"));
    }
    negative_phrase().is_match(text).then_some(false)
}

fn build(raw: &str, is_sarcastic: bool, target: String, explanation: String) -> ParsedResponse {
    let (target, explanation) = if is_sarcastic {
        (target, explanation)
    } else {
        (String::new(), String::new())
    };
    ParsedResponse {
        is_sarcastic,
        target,
        explanation,
        raw: raw.to_string(),
    }
}

fn parse_tagged(raw: &str) -> Option<Result<ParsedResponse, FormatError>> {
    let block = result_block().captures(raw)?;
    let inner = block.get(1).unwrap().as_str();
    let outside = format!(
        "{}\n{}",
        &raw[..block.get(0).unwrap().start()],
        &raw[block.get(0).unwrap().end()..]
    );
    let Some(is_sarcastic) = verdict(&outside).or_else(|| verdict(inner)) else {
        return Some(Err(FormatError::MissingVerdict));
    };
    let target = target_tag().captures(inner).map(|c| unescape(c[2].trim()));
    let explanation = explanation_tag()
        .captures(inner)
        .map(|c| unescape(c[2].trim()));
    if is_sarcastic {
        let Some(target) = target else {
            return Some(Err(FormatError::MissingField("target")));
        };
        let Some(explanation) = explanation else {
            return Some(Err(FormatError::MissingField("explanation")));
        };
        return Some(Ok(build(raw, true, target, explanation)));
    }
    Some(Ok(build(raw, false, String::new(), String::new())))
}

/// Field values run from their label to the next recognized label.
fn labeled_fields(text: &str) -> (Option<String>, Option<String>) {
    let labels: Vec<_> = field_label().captures_iter(text).collect();
    let mut target = None;
    let mut explanation = None;
    for (i, cap) in labels.iter().enumerate() {
        let whole = cap.get(0).unwrap();
        let end = labels
            .get(i + 1)
            .map_or(text.len(), |n| n.get(0).unwrap().start());
        let value = text[whole.end()..end]
            .trim()
            .trim_end_matches([';', '；'])
            .trim()
            .to_string();
        let name = cap[1].to_lowercase();
        let slot = if name == "讽刺对象" || name == "target" {
            &mut target
        } else {
            &mut explanation
        };
        if slot.is_none() {
            *slot = Some(value);
        }
    }
    (target, explanation)
}

fn parse_labeled(raw: &str) -> Result<ParsedResponse, FormatError> {
    let is_sarcastic = verdict(raw).ok_or(FormatError::MissingVerdict)?;
    if !is_sarcastic {
        return Ok(build(raw, false, String::new(), String::new()));
    }
    let (target, explanation) = labeled_fields(raw);
    let target = target.ok_or(FormatError::MissingField("target"))?;
    let explanation = explanation.ok_or(FormatError::MissingField("explanation"))?;
    Ok(build(raw, true, target, explanation))
}

pub fn parse_structured_output(raw: &str, mode: ParseMode) -> Result<ParsedResponse, FormatError> {
    match parse_tagged(raw) {
        Some(result) => result,
        None if mode == ParseMode::Strict => Err(FormatError::MissingVerdict),
        None => parse_labeled(raw),
    }
}

/// Renders an answer in the tagged form; `parse_structured_output`
/// inverts this on all three fields.
pub fn render_tagged(
    is_sarcastic: bool,
    target: &str,
    explanation: &str,
    lang: Language,
) -> String {
    let verdict = match (lang, is_sarcastic) {
        (Language::Zh, true) => "是否讽刺: 是",
        (Language::Zh, false) => "是否讽刺: 否",
        (Language::En, true) => "Sarcastic: yes",
        (Language::En, false) => "Sarcastic: no",
    };
    let (target, explanation) = if is_sarcastic {
        (escape(target), escape(explanation))
    } else {
        (String::new(), String::new())
    };
    format!(
        "{verdict}\n<result><target>{target}</target><explanation>{explanation}</explanation></result>"
    )
}

impl ParsedResponse {
    pub fn render_tagged(&self, lang: Language) -> String {
        render_tagged(self.is_sarcastic, &self.target, &self.explanation, lang)
    }
}
