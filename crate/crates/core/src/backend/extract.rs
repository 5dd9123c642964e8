//! Parsing of raw model output: answer labels, option prefixes, JSON blocks
//! and single-token verdicts.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::Value;

use crate::dataset::Label;

fn tail_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i:final\s+answer|answer)(?:\s+(?i:is|would\s+be|should\s+be))?[\s:*\-]*(?i:option\s+)?[(\[]?([A-Z])\b",
        )
        .expect("valid regex")
    })
}

fn delimited_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([A-Z])\)|\b([A-Z])[.)](?:\s|$)").expect("valid regex"))
}

/// Pulls an answer label out of a free-form response.
///
/// Rules, in priority order:
/// 1. the last "answer is X" / "Final Answer: X" style match;
/// 2. the first delimited letter: `(B)`, `B.`, `B)`;
/// 3. a bare letter as the entire trimmed response.
///
/// Only labels in `valid` are accepted.
pub fn extract_label(raw: &str, valid: &[Label]) -> Option<Label> {
    let accept = |s: &str| Label::parse(s).filter(|l| valid.contains(l));

    let tail = tail_pattern()
        .captures_iter(raw)
        .filter_map(|c| accept(c.get(1)?.as_str()))
        .last();
    if tail.is_some() {
        return tail;
    }

    let delimited = delimited_pattern().captures_iter(raw).find_map(|c| {
        let m = c.get(1).or_else(|| c.get(2))?;
        accept(m.as_str())
    });
    if delimited.is_some() {
        return delimited;
    }

    accept(raw.trim())
}

fn prefix_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(?:(?i:option)\s+[A-Za-z0-9]+\s*[:.)\-]\s*|\([A-Za-z]\)\s+|[A-Za-z][.)]\s+|[IVXivx]+\.\s+|\d+[.)]\s+)",
        )
        .expect("valid regex")
    })
}

/// Removes leading `Option A:`, `A.`, `A)`, `(A)`, `IV.`, `3.` style prefixes.
/// Applied to a fixed point, so it is idempotent.
pub fn strip_option_prefix(text: &str) -> String {
    let mut current = text.trim();
    while let Some(m) = prefix_pattern().find(current) {
        let rest = current[m.end()..].trim();
        if rest.is_empty() {
            break;
        }
        current = rest;
    }
    current.to_string()
}

/// Finds the first JSON object in a response: a fenced ```json block if
/// present, otherwise the first parseable `{...}` value.
pub fn extract_json_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    if let Some(start) = raw.find("```json") {
        let body = &raw[start + 7..];
        if let Some(end) = body.find("```") {
            if let Ok(Value::Object(map)) = serde_json::from_str(body[..end].trim()) {
                return Some(map);
            }
        }
    }
    for (idx, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[idx..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Equivalent,
    NotEquivalent,
}

/// `None` when the response contains neither token.
pub fn parse_verdict(raw: &str) -> Option<Verdict> {
    let upper = raw.to_uppercase();
    if upper.contains("NOT_EQUIVALENT") || upper.contains("NOT EQUIVALENT") {
        Some(Verdict::NotEquivalent)
    } else if upper.contains("EQUIVALENT") {
        Some(Verdict::Equivalent)
    } else {
        None
    }
}

/// Text between the last `<tag>` and its closing tag.
pub fn extract_tag<'a>(raw: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = raw.rfind(&open)? + open.len();
    let end = raw[start..].find(&close)? + start;
    Some(raw[start..end].trim())
}
