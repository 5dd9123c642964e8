//! Role functions: each renders a prompt, calls the backend, and parses and
//! validates the reply, retrying with feedback where the format allows it.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::extract::{extract_json_object, extract_label, parse_verdict, strip_option_prefix, Verdict};
use super::prompts::{self, GenerationFields, AVOID_MARKER};
use super::{Backend, BackendError};
use crate::dataset::{normalize_ws, Label, McqItem};
use crate::error::{Error, Result};
use crate::seed;

/// One sampled answer to an evaluation prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSample {
    pub raw_text: String,
    pub parsed_label: Option<Label>,
    pub parse_ok: bool,
}

impl AnswerSample {
    pub fn parse(raw_text: String, valid: &[Label]) -> Self {
        let parsed_label = extract_label(&raw_text, valid);
        AnswerSample {
            raw_text,
            parse_ok: parsed_label.is_some(),
            parsed_label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    /// Slots are existing distractor labels whose texts get replaced.
    Replace,
    /// Slots are fresh labels past the item's last option.
    Fill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RewriteDecision {
    KeepAll,
    Improve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub distractors: BTreeMap<Label, String>,
    pub reasoning: String,
    pub decision: Option<RewriteDecision>,
}

/// Checks a parsed `{"distractors": {...}}` reply against the requested slots.
pub(crate) fn validate_distractor_reply(
    raw: &str,
    slots: &[Label],
    correct_label: Label,
    correct_text: &str,
    avoid: &[String],
    require_decision: bool,
) -> std::result::Result<GenerationResult, String> {
    let obj = extract_json_object(raw).ok_or("the reply did not contain a JSON object")?;
    let map = obj
        .get("distractors")
        .and_then(Value::as_object)
        .ok_or("the JSON object has no \"distractors\" dictionary")?;
    let mut distractors = BTreeMap::new();
    for (key, value) in map {
        let label = Label::parse(key).ok_or_else(|| format!("\"{key}\" is not an option identifier"))?;
        if label == correct_label {
            return Err(format!(
                "the correct option identifier \"{correct_label}\" was used as a key"
            ));
        }
        let text = value
            .as_str()
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| format!("the value for \"{key}\" is not a nonempty string"))?;
        distractors.insert(label, text.to_string());
    }
    let expected: Vec<Label> = slots.to_vec();
    let got: Vec<Label> = distractors.keys().copied().collect();
    let mut expected_sorted = expected.clone();
    expected_sorted.sort();
    if got != expected_sorted {
        let keys = |ls: &[Label]| ls.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", ");
        return Err(format!(
            "the keys were [{}] but must be exactly [{}]",
            keys(&got),
            keys(&expected_sorted)
        ));
    }
    let correct_norm = normalize_ws(correct_text);
    let mut seen: HashSet<String> = avoid.iter().map(|t| normalize_ws(t)).collect();
    for (label, text) in &distractors {
        let norm = normalize_ws(text);
        if norm == correct_norm {
            return Err(format!("distractor {label} is the same as the correct answer"));
        }
        if !seen.insert(norm) {
            return Err(format!("distractor {label} duplicates another option text"));
        }
    }
    let decision = match obj.get("decision").and_then(Value::as_str) {
        Some(s) => Some(match s.trim() {
            "KEEP_ALL" => RewriteDecision::KeepAll,
            "IMPROVE" => RewriteDecision::Improve,
            other => return Err(format!("decision must be KEEP_ALL or IMPROVE, got \"{other}\"")),
        }),
        None if require_decision => return Err("the reply has no \"decision\" field".into()),
        None => None,
    };
    let reasoning = obj
        .get("reasoning")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    Ok(GenerationResult {
        distractors,
        reasoning,
        decision,
    })
}

fn retry_feedback(reason: &str) -> String {
    format!("Your previous output was rejected because {reason}. Fix this problem in your new output.")
}

impl Backend {
    /// Draws `k` answers to the item's evaluation prompt.
    pub fn sample_answers(&self, item: &McqItem, k: usize, seed: u64) -> Result<Vec<AnswerSample>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let prompt = prompts::evaluation(item);
        let valid = item.labels();
        let mut out = Vec::with_capacity(k);
        for i in 0..k {
            let raw = self.complete(&prompt, i as u32, seed)?;
            out.push(AnswerSample::parse(raw, &valid));
        }
        if out.iter().all(|s| !s.parse_ok) {
            tracing::warn!(item = %item.id, k, "no sampled answer contained a recognizable label");
        }
        Ok(out)
    }

    /// Asks the generator for new texts at `slots`.
    ///
    /// `avoid` lists texts that must not come back (for example, options
    /// already in use or candidates rejected earlier). Invalid replies are
    /// retried with the rejection reason in the feedback slot.
    pub fn generate_distractors(
        &self,
        item: &McqItem,
        slots: &[Label],
        mode: GenerationMode,
        avoid: &[String],
        seed: u64,
    ) -> Result<GenerationResult> {
        if slots.is_empty() {
            return Err(Error::InvalidArgument("no slots requested".into()));
        }
        let mut existing = BTreeMap::new();
        for &slot in slots {
            if slot == item.correct {
                return Err(Error::InvalidArgument(format!("slot {slot} is the correct option")));
            }
            let text = match mode {
                GenerationMode::Replace => item.option(slot).ok_or(Error::UnknownLabel(slot))?.to_string(),
                GenerationMode::Fill if slot.index() >= item.n_options() => String::new(),
                GenerationMode::Fill => {
                    return Err(Error::InvalidArgument(format!("fill slot {slot} is already an option")))
                }
            };
            if existing.insert(slot, text).is_some() {
                return Err(Error::InvalidArgument(format!("slot {slot} requested twice")));
            }
        }
        let avoid_line = if avoid.is_empty() {
            String::new()
        } else {
            format!(
                "{AVOID_MARKER}{}",
                serde_json::to_string(avoid).expect("string list serializes")
            )
        };
        let mut feedback = avoid_line.clone();
        let mut last_response = String::new();
        let mut last_reason = String::new();
        let attempts = self.max_retries() + 1;
        for attempt in 0..attempts {
            let prompt = prompts::generation(&GenerationFields {
                question_text: &item.stem,
                correct_option: item.correct,
                correct_answer: item.correct_text(),
                existing: &existing,
                failed_feedback: &feedback,
            });
            let raw = self.complete(&prompt, attempt, seed)?;
            match validate_distractor_reply(&raw, slots, item.correct, item.correct_text(), avoid, false) {
                Ok(result) => return Ok(result),
                Err(reason) => {
                    tracing::debug!(item = %item.id, attempt, "generation rejected: {reason}");
                    feedback = [avoid_line.as_str(), &retry_feedback(&reason)]
                        .iter()
                        .filter(|s| !s.is_empty())
                        .copied()
                        .collect::<Vec<_>>()
                        .join("\n");
                    last_response = raw;
                    last_reason = reason;
                }
            }
        }
        Err(BackendError::GenerationExhausted {
            attempts,
            last_response,
            reason: last_reason,
        }
        .into())
    }

    /// Appends generated options until the item has `target_count` options.
    pub fn expand_options(&self, item: &McqItem, target_count: usize, seed: u64) -> Result<McqItem> {
        if target_count <= item.n_options() {
            return Err(Error::InvalidArgument(format!(
                "target {target_count} must exceed the current {} options",
                item.n_options()
            )));
        }
        if target_count > crate::dataset::MAX_OPTIONS {
            return Err(Error::InvalidArgument(format!(
                "target {target_count} exceeds the label alphabet"
            )));
        }
        let wanted = target_count - item.n_options();
        let prompt = prompts::expansion(item, target_count);
        let attempts = self.max_retries() + 1;
        let mut last_response = String::new();
        let mut last_reason = String::new();
        for attempt in 0..attempts {
            let raw = self.complete(&prompt, attempt, seed)?;
            match parse_expansion(&raw, item, wanted) {
                Ok(new_options) => {
                    let mut expanded = item.clone();
                    expanded.options.extend(new_options);
                    expanded.validate()?;
                    return Ok(expanded);
                }
                Err(reason) => {
                    tracing::debug!(item = %item.id, attempt, "expansion rejected: {reason}");
                    last_response = raw;
                    last_reason = reason;
                }
            }
        }
        Err(BackendError::GenerationExhausted {
            attempts,
            last_response,
            reason: last_reason,
        }
        .into())
    }

    /// Asks the judge whether `candidate` means the same as `correct`.
    /// Identical strings short-circuit; an unreadable verdict counts as
    /// EQUIVALENT so a doubtful candidate is rejected.
    pub fn judge_equivalence(&self, stem: &str, correct: &str, candidate: &str) -> Result<Verdict> {
        if correct == candidate {
            return Ok(Verdict::Equivalent);
        }
        let prompt = prompts::equivalence(stem, correct, candidate);
        let raw = self.greedy().complete(&prompt, 0, seed::derive(0, &["judge"]))?;
        Ok(parse_verdict(&raw).unwrap_or_else(|| {
            tracing::warn!("unreadable equivalence verdict, treating as EQUIVALENT: {raw:?}");
            Verdict::Equivalent
        }))
    }
}

fn parse_expansion(raw: &str, item: &McqItem, wanted: usize) -> std::result::Result<Vec<String>, String> {
    let obj = extract_json_object(raw).ok_or("the reply did not contain a JSON object")?;
    let list = obj
        .get("new_options")
        .and_then(Value::as_array)
        .ok_or("the JSON object has no \"new_options\" array")?;
    if list.len() != wanted {
        return Err(format!("expected {wanted} new options, got {}", list.len()));
    }
    let mut seen: HashSet<String> = item.options.iter().map(|t| normalize_ws(t)).collect();
    let mut out = Vec::with_capacity(wanted);
    for value in list {
        let text = value.as_str().ok_or("a new option is not a string")?;
        let text = strip_option_prefix(text);
        if text.is_empty() {
            return Err("a new option is empty".into());
        }
        if !seen.insert(normalize_ws(&text)) {
            return Err(format!("new option \"{text}\" duplicates an existing option"));
        }
        out.push(text);
    }
    Ok(out)
}
