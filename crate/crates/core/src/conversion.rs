//! Short-answer baselines (direct stripping, convertibility filtering,
//! model rewriting) and the single-round distractor rewrite baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{extract_tag, prompts, validate_distractor_reply, Backend, BackendError, RewriteDecision};
use crate::dataset::McqItem;
use crate::error::{Error, Result};
use crate::idc::ItemFailure;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Direct,
    Filtered,
    Rewritten,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortAnswerItem {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub provenance: Provenance,
    pub source_id: String,
}

/// Drops the options: the stem becomes the question and the correct option
/// text the answer, both verbatim.
pub fn direct_convert(item: &McqItem) -> ShortAnswerItem {
    ShortAnswerItem {
        id: item.id.clone(),
        question: item.stem.clone(),
        answer: item.correct_text().to_string(),
        provenance: Provenance::Direct,
        source_id: item.id.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Convertibility {
    Convertible,
    NotConvertible,
}

/// Reads the last `FINAL_LABEL:` line of a judge reply.
pub fn parse_final_label(raw: &str) -> Option<Convertibility> {
    let line = raw
        .lines()
        .rev()
        .find_map(|l| l.trim().trim_matches('*').trim().strip_prefix("FINAL_LABEL:"))?;
    match line
        .trim()
        .trim_matches(|c: char| c == '*' || c == '"' || c == '.')
        .trim()
    {
        "CONVERTIBLE" => Some(Convertibility::Convertible),
        "NOT_CONVERTIBLE" => Some(Convertibility::NotConvertible),
        _ => None,
    }
}

/// Asks whether the stem can stand alone. A reply without a readable
/// label counts as NOT_CONVERTIBLE.
pub fn filter_convertible(item: &McqItem, backend: &Backend) -> Result<Convertibility> {
    let prompt = prompts::convertibility(&item.stem, item.correct_text());
    let raw = backend
        .greedy()
        .complete(&prompt, 0, seed::derive(0, &["convertibility"]))?;
    Ok(parse_final_label(&raw).unwrap_or_else(|| {
        tracing::warn!(item = %item.id, "convertibility reply has no FINAL_LABEL line; treating as NOT_CONVERTIBLE");
        Convertibility::NotConvertible
    }))
}

fn parse_rewrite(raw: &str) -> std::result::Result<(String, String), String> {
    let question = extract_tag(raw, "Question").ok_or("missing <Question> tags")?;
    let answer = extract_tag(raw, "Answer").ok_or("missing <Answer> tags")?;
    if question.is_empty() {
        return Err("empty question".into());
    }
    if answer.is_empty() {
        return Err("empty answer".into());
    }
    Ok((question.to_string(), answer.to_string()))
}

/// Has the model rewrite the question into short-answer form.
pub fn rewrite_item(item: &McqItem, backend: &Backend, seed: u64) -> Result<ShortAnswerItem> {
    let with_options = format!("{}\n{}", item.stem, item.render_options());
    let prompt = prompts::conversion(&with_options, item.correct_text());
    let attempts = backend.max_retries() + 1;
    let mut last_response = String::new();
    let mut last_reason = String::new();
    for attempt in 0..attempts {
        let raw = backend.complete(&prompt, attempt, seed)?;
        match parse_rewrite(&raw) {
            Ok((question, answer)) => {
                return Ok(ShortAnswerItem {
                    id: item.id.clone(),
                    question,
                    answer,
                    provenance: Provenance::Rewritten,
                    source_id: item.id.clone(),
                })
            }
            Err(reason) => {
                tracing::debug!(item = %item.id, attempt, "rewrite rejected: {reason}");
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

/// One-shot review of all distractors. The model may keep them or replace
/// any subset; the label set and the correct option never change.
pub fn single_round_rewrite(item: &McqItem, backend: &Backend, seed: u64) -> Result<(McqItem, RewriteDecision)> {
    let slots = item.distractor_labels();
    if slots.is_empty() {
        return Err(Error::invalid_item(&item.id, "no distractors to rewrite"));
    }
    let prompt = prompts::single_round_rewrite(item);
    let attempts = backend.max_retries() + 1;
    let mut last_response = String::new();
    let mut last_reason = String::new();
    for attempt in 0..attempts {
        let raw = backend.complete(&prompt, attempt, seed)?;
        let outcome =
            validate_distractor_reply(&raw, &slots, item.correct, item.correct_text(), &[], true).and_then(|result| {
                let decision = result.decision.expect("decision required");
                if decision == RewriteDecision::KeepAll {
                    return Ok((item.clone(), decision));
                }
                let mut rewritten = item.clone();
                for (label, text) in result.distractors {
                    rewritten.options[label.index()] = text;
                }
                rewritten.validate().map_err(|e| e.to_string())?;
                Ok((rewritten, decision))
            });
        match outcome {
            Ok(done) => return Ok(done),
            Err(reason) => {
                tracing::debug!(item = %item.id, attempt, "single-round rewrite rejected: {reason}");
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConversionMode {
    Direct,
    Filter,
    Rewrite,
}

#[derive(Debug, Clone, Default)]
pub struct ConversionRun {
    pub items: Vec<ShortAnswerItem>,
    /// Ids the convertibility filter dropped.
    pub dropped: Vec<String>,
    pub failures: Vec<ItemFailure>,
}

/// Applies one conversion baseline to a dataset, in parallel, keeping
/// input order.
pub fn convert_dataset(
    items: &[McqItem],
    mode: ConversionMode,
    backend: Option<&Backend>,
    seed: u64,
) -> Result<ConversionRun> {
    let backend = match (mode, backend) {
        (ConversionMode::Direct, _) => None,
        (_, Some(b)) => Some(b),
        (_, None) => return Err(Error::InvalidArgument("this conversion mode needs a backend".into())),
    };
    let results: Vec<Result<Option<ShortAnswerItem>>> = items
        .par_iter()
        .map(|item| match (mode, backend) {
            (ConversionMode::Direct, _) => Ok(Some(direct_convert(item))),
            (ConversionMode::Filter, Some(b)) => Ok(match filter_convertible(item, b)? {
                Convertibility::Convertible => Some(ShortAnswerItem {
                    provenance: Provenance::Filtered,
                    ..direct_convert(item)
                }),
                Convertibility::NotConvertible => None,
            }),
            (ConversionMode::Rewrite, Some(b)) => {
                rewrite_item(item, b, seed::derive(seed, &["rewrite", &item.id])).map(Some)
            }
            _ => unreachable!("backend presence checked above"),
        })
        .collect();
    let mut run = ConversionRun::default();
    for (item, result) in items.iter().zip(results) {
        match result {
            Ok(Some(converted)) => run.items.push(converted),
            Ok(None) => run.dropped.push(item.id.clone()),
            Err(e) => run.failures.push(ItemFailure {
                id: item.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Completion, CompletionRequest, SamplingParams};
    use crate::dataset::Label;
    use std::sync::{Arc, Mutex};

    struct Scripted(Mutex<Vec<String>>);

    impl Completion for Scripted {
        fn complete(&self, _: &SamplingParams, _: &CompletionRequest<'_>) -> std::result::Result<String, BackendError> {
            Ok(self.0.lock().unwrap().pop().unwrap_or_default())
        }
    }

    fn backend(replies: &[&str], retries: u32) -> Backend {
        let replies = replies.iter().rev().map(|s| s.to_string()).collect();
        Backend::new(
            SamplingParams {
                model_name: "m".into(),
                temperature: 0.0,
                top_p: 1.0,
                max_tokens: 64,
            },
            Arc::new(Scripted(Mutex::new(replies))),
            retries,
        )
    }

    fn item() -> McqItem {
        McqItem::new(
            "q",
            "Which of the following is a fruit?",
            vec![
                "obviously wrong".into(),
                "Apple".into(),
                "reasonable distractor".into(),
                "too similar to B".into(),
            ],
            Label::from_char('B').unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn direct_is_a_projection() {
        let it = item();
        let sa = direct_convert(&it);
        assert_eq!(sa.question, it.stem);
        assert_eq!(sa.answer, it.options[it.correct.index()]);
        assert_eq!(sa.provenance, Provenance::Direct);
    }

    #[test]
    fn final_label_parsing() {
        assert_eq!(
            parse_final_label("Analysis: x\nFINAL_LABEL: NOT_CONVERTIBLE"),
            Some(Convertibility::NotConvertible)
        );
        assert_eq!(
            parse_final_label("Analysis: y\n**FINAL_LABEL: CONVERTIBLE**"),
            Some(Convertibility::Convertible)
        );
        assert_eq!(parse_final_label("Analysis: it is convertible"), None);
    }

    #[test]
    fn filter_fails_closed() {
        let b = backend(&["I think so."], 0);
        assert_eq!(filter_convertible(&item(), &b).unwrap(), Convertibility::NotConvertible);
        let b = backend(&["Analysis: ok\nFINAL_LABEL: CONVERTIBLE"], 0);
        assert_eq!(filter_convertible(&item(), &b).unwrap(), Convertibility::Convertible);
    }

    #[test]
    fn rewrite_retries_on_missing_tag() {
        let b = backend(
            &[
                "<Question>Q?</Question><Answer>A",
                "<Question>Q?</Question>\n<Answer>Apple</Answer>",
            ],
            1,
        );
        let sa = rewrite_item(&item(), &b, 0).unwrap();
        assert_eq!(sa.answer, "Apple");
        assert_eq!(sa.source_id, "q");
        let b = backend(&["<Question>Q?</Question><Answer>A"], 0);
        assert!(matches!(
            rewrite_item(&item(), &b, 0),
            Err(Error::Backend(BackendError::GenerationExhausted { .. }))
        ));
    }

    #[test]
    fn single_round_keep_and_improve() {
        let keep = r#"{"decision":"KEEP_ALL","distractors":{"A":"obviously wrong","C":"reasonable distractor","D":"too similar to B"},"reasoning":"fine"}"#;
        let (out, d) = single_round_rewrite(&item(), &backend(&[keep], 0), 0).unwrap();
        assert_eq!(d, RewriteDecision::KeepAll);
        assert_eq!(out, item());

        let improve = r#"{"decision":"IMPROVE","distractors":{"A":"Carrot","C":"reasonable distractor","D":"Potato"},"reasoning":"A and D"}"#;
        let (out, d) = single_round_rewrite(&item(), &backend(&[improve], 0), 0).unwrap();
        assert_eq!(d, RewriteDecision::Improve);
        assert_eq!(out.options, vec!["Carrot", "Apple", "reasonable distractor", "Potato"]);
        assert_eq!(out.correct, item().correct);
    }

    #[test]
    fn single_round_rejects_correct_key() {
        let bad = r#"{"decision":"IMPROVE","distractors":{"A":"x","B":"y","C":"z","D":"w"},"reasoning":""}"#;
        let good = r#"{"decision":"IMPROVE","distractors":{"A":"x","C":"z","D":"w"},"reasoning":""}"#;
        let (out, _) = single_round_rewrite(&item(), &backend(&[bad, good], 1), 0).unwrap();
        assert_eq!(out.options[0], "x");
        assert!(single_round_rewrite(&item(), &backend(&[bad], 0), 0).is_err());
    }
}
