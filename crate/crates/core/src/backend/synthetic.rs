//! Deterministic stand-in for a chat model.
//!
//! The oracle reads the rendered prompt, works out which role it is being
//! asked to play, and answers in the format a real model would. Answer
//! choices are drawn from per-item preference weights over option texts; the
//! generator proposes texts from a per-item candidate list; the judge
//! consults a table of equivalent pairs. All randomness is derived from the
//! request seed, sample index and prompt hash.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prompts::{between, PromptKind, AVOID_MARKER};
use super::{BackendError, Completion, CompletionRequest, SamplingParams};
use crate::dataset::{normalize_ws, Label};
use crate::seed;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticOracleSpec {
    /// Stem → option text → nonnegative preference weight.
    pub weights: BTreeMap<String, BTreeMap<String, f64>>,
    /// Weights applied to a text in any item, below per-item weights.
    pub text_weights: BTreeMap<String, f64>,
    /// Weight for texts with no explicit weight. `None` means 1.
    pub fallback_weight: Option<f64>,
    /// Multiplicative positional bias per label.
    pub label_weights: BTreeMap<Label, f64>,
    /// Stem → texts the generator proposes, in order.
    pub candidates: BTreeMap<String, Vec<String>>,
    /// Draw candidates at random instead of in list order.
    pub shuffle_candidates: bool,
    /// Pairs the judge calls EQUIVALENT (symmetric, whitespace/case-insensitive).
    pub equivalences: Vec<(String, String)>,
    /// Probability that an answer response contains no label.
    pub parse_failure_rate: f64,
}

impl SyntheticOracleSpec {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |what: &str| Err(BackendError::Config(format!("synthetic oracle: {what}")));
        let all_weights = self
            .weights
            .values()
            .flat_map(|m| m.values())
            .chain(self.text_weights.values())
            .chain(self.label_weights.values())
            .chain(self.fallback_weight.iter());
        for w in all_weights {
            if !(w.is_finite() && *w >= 0.0) {
                return bad("weights must be finite and nonnegative");
            }
        }
        if !(0.0..=1.0).contains(&self.parse_failure_rate) {
            return bad("parse_failure_rate must be in [0, 1]");
        }
        Ok(())
    }

    fn fallback(&self) -> f64 {
        self.fallback_weight.unwrap_or(1.0)
    }

    /// Effective weights for an item's options; uniform when all are zero.
    pub fn option_weights(&self, stem: &str, options: &[(Label, String)]) -> Vec<f64> {
        let per_item = self.weights.get(stem);
        let mut w: Vec<f64> = options
            .iter()
            .map(|(label, text)| {
                let base = per_item
                    .and_then(|m| m.get(text))
                    .or_else(|| self.text_weights.get(text))
                    .copied()
                    .unwrap_or_else(|| self.fallback());
                base * self.label_weights.get(label).copied().unwrap_or(1.0)
            })
            .collect();
        if w.iter().all(|x| *x <= 0.0) {
            w.iter_mut().for_each(|x| *x = 1.0);
        }
        w
    }

    fn equivalent(&self, a: &str, b: &str) -> bool {
        let (a, b) = (fold(a), fold(b));
        a == b
            || self
                .equivalences
                .iter()
                .any(|(x, y)| (fold(x) == a && fold(y) == b) || (fold(x) == b && fold(y) == a))
    }
}

fn fold(text: &str) -> String {
    normalize_ws(text).to_lowercase()
}

#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    spec: SyntheticOracleSpec,
}

impl SyntheticOracle {
    pub fn new(spec: SyntheticOracleSpec) -> Result<Self, BackendError> {
        spec.validate()?;
        Ok(SyntheticOracle { spec })
    }

    pub fn spec(&self) -> &SyntheticOracleSpec {
        &self.spec
    }

    fn answer(
        &self,
        prompt: &str,
        params: &SamplingParams,
        rng: &mut impl Rng,
        sample_index: u32,
    ) -> Result<String, BackendError> {
        let stem = between(prompt, "Question:\n", "\n\nOptions:\n").ok_or_else(|| malformed("evaluation"))?;
        let block =
            between(prompt, "\n\nOptions:\n", "\n\nRespond with only").ok_or_else(|| malformed("evaluation"))?;
        let options = parse_option_lines(block);
        if options.is_empty() {
            return Err(malformed("evaluation options"));
        }
        if self.spec.parse_failure_rate > 0.0 && rng.gen_bool(self.spec.parse_failure_rate) {
            return Ok("I am not sure how to answer this one.".into());
        }
        let weights = self.spec.option_weights(stem, &options);
        let pick = if params.temperature == 0.0 {
            weights
                .iter()
                .enumerate()
                .fold(0, |best, (i, w)| if *w > weights[best] { i } else { best })
        } else {
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        };
        let label = options[pick].0;
        Ok(match sample_index % 4 {
            0 => format!("The answer is ({label})."),
            1 => label.to_string(),
            2 => format!("Answer: {label}"),
            _ => format!("After weighing the options, I choose {label}."),
        })
    }

    /// Picks `count` texts from the item's candidate list, skipping anything in
    /// `avoid`, then pads with numbered filler texts.
    fn propose(&self, stem: &str, count: usize, avoid: &HashSet<String>, rng: &mut impl Rng) -> Vec<String> {
        let mut pool: Vec<&String> = self
            .spec
            .candidates
            .get(stem)
            .map(|c| c.iter().filter(|t| !avoid.contains(&fold(t))).collect())
            .unwrap_or_default();
        if self.spec.shuffle_candidates {
            pool.shuffle(rng);
        }
        let mut out: Vec<String> = pool.into_iter().take(count).cloned().collect();
        let tag = &hex::encode(Sha256::digest(stem.as_bytes()))[..8];
        let mut n = 1;
        while out.len() < count {
            let filler = format!("Synthetic distractor {n} ({tag})");
            if !avoid.contains(&fold(&filler)) && !out.contains(&filler) {
                out.push(filler);
            }
            n += 1;
        }
        out
    }

    fn generate(&self, prompt: &str, rng: &mut impl Rng) -> Result<String, BackendError> {
        let stem = between(prompt, "Question Text: ", "\nCorrect Option: ").ok_or_else(|| malformed("generation"))?;
        let correct =
            between(prompt, "Correct Answer: ", "\nNumber of Distractors").ok_or_else(|| malformed("generation"))?;
        let existing: BTreeMap<Label, String> = serde_json::from_str(
            between(prompt, "Existing Distractors (to be replaced): ", "\n\nYour Task:")
                .ok_or_else(|| malformed("generation"))?,
        )
        .map_err(|_| malformed("generation slots"))?;
        let mut avoid: HashSet<String> = existing.values().map(|t| fold(t)).collect();
        avoid.insert(fold(correct));
        if let Some(line) = prompt.lines().find_map(|l| l.strip_prefix(AVOID_MARKER)) {
            let listed: Vec<String> = serde_json::from_str(line).map_err(|_| malformed("avoid list"))?;
            avoid.extend(listed.iter().map(|t| fold(t)));
        }
        let texts = self.propose(stem, existing.len(), &avoid, rng);
        let distractors: BTreeMap<Label, String> = existing.keys().copied().zip(texts).collect();
        let body = serde_json::json!({
            "distractors": distractors,
            "reasoning": "Selected plausible alternatives that share the form of the correct answer.",
        });
        Ok(format!("```json\n{body}\n```"))
    }

    fn rewrite_all(&self, prompt: &str, rng: &mut impl Rng) -> Result<String, BackendError> {
        let stem = between(prompt, "Question Text: ", "\nCorrect Option: ").ok_or_else(|| malformed("rewrite"))?;
        let correct_label = between(prompt, "Correct Option: ", "\n")
            .and_then(Label::parse)
            .ok_or_else(|| malformed("rewrite"))?;
        let all: BTreeMap<Label, String> = serde_json::from_str(
            between(
                prompt,
                "Existing Options (with all options including correct answer): ",
                "\n\nYour Task:",
            )
            .ok_or_else(|| malformed("rewrite"))?,
        )
        .map_err(|_| malformed("rewrite options"))?;
        let avoid: HashSet<String> = all.values().map(|t| fold(t)).collect();
        let mut distractors: BTreeMap<Label, String> = all.into_iter().filter(|(l, _)| *l != correct_label).collect();
        let fresh: Vec<String> = self
            .spec
            .candidates
            .get(stem)
            .map(|_| self.propose(stem, 1, &avoid, rng))
            .unwrap_or_default();
        let decision = match (fresh.first(), distractors.keys().next().copied()) {
            (Some(text), Some(first)) => {
                distractors.insert(first, text.clone());
                "IMPROVE"
            }
            _ => "KEEP_ALL",
        };
        Ok(serde_json::json!({
            "decision": decision,
            "distractors": distractors,
            "reasoning": "Reviewed each distractor against the correct answer.",
        })
        .to_string())
    }

    fn judge(&self, prompt: &str) -> Result<String, BackendError> {
        let text1 = between(
            prompt,
            "Text 1 (Correct Answer): ",
            "\nText 2 (Generated Distractor - to be checked): ",
        )
        .ok_or_else(|| malformed("equivalence"))?;
        let text2 = between(
            prompt,
            "Text 2 (Generated Distractor - to be checked): ",
            "\n\nCRITICAL:",
        )
        .ok_or_else(|| malformed("equivalence"))?;
        Ok(if self.spec.equivalent(text1, text2) {
            "EQUIVALENT"
        } else {
            "NOT_EQUIVALENT"
        }
        .into())
    }

    fn expand(&self, prompt: &str, rng: &mut impl Rng) -> Result<String, BackendError> {
        let raw =
            between(prompt, "<original question>\n", "\n</original question>").ok_or_else(|| malformed("expansion"))?;
        let current: usize = between(prompt, "question with ", " options")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("expansion"))?;
        let wanted: usize = between(prompt, "Now generate exactly ", " new incorrect")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("expansion"))?;
        let lines: Vec<&str> = raw.lines().collect();
        let split = lines.len().saturating_sub(current);
        let stem = lines[..split].join("\n");
        let existing = parse_option_lines(&lines[split..].join("\n"));
        let avoid: HashSet<String> = existing.iter().map(|(_, t)| fold(t)).collect();
        let texts = self.propose(&stem, wanted, &avoid, rng);
        let labeled: Vec<String> = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| match i % 3 {
                0 => format!(
                    "Option {}: {t}",
                    Label::from_index(current + i).map_or('?', |l| l.as_char())
                ),
                1 => t,
                _ => format!("{}. {t}", roman(i + 1)),
            })
            .collect();
        let body = serde_json::json!({"thinking": "Drafted options covering nearby concepts.", "new_options": labeled});
        Ok(format!("```json\n{body}\n```"))
    }

    fn convertibility(&self, prompt: &str) -> Result<String, BackendError> {
        let question = between(prompt, "Original Question: ", "\n\nCorrect Answer: ")
            .ok_or_else(|| malformed("convertibility"))?;
        let lower = question.to_lowercase();
        let markers = [
            "which of the following",
            "except",
            "not true",
            "all of the above",
            "best describes",
            "best explains",
        ];
        Ok(if markers.iter().any(|m| lower.contains(m)) {
            "Analysis: The stem depends on the listed options.\nFINAL_LABEL: NOT_CONVERTIBLE".into()
        } else {
            "Analysis: The stem is self-contained.\nFINAL_LABEL: CONVERTIBLE".into()
        })
    }

    fn convert(&self, prompt: &str) -> Result<String, BackendError> {
        let question = between(prompt, "Original question with options:\n", "\n\nCorrect answer:\n")
            .ok_or_else(|| malformed("conversion"))?;
        let answer =
            between(prompt, "\n\nCorrect answer:\n", "\n\nReturn the output").ok_or_else(|| malformed("conversion"))?;
        let kept: Vec<&str> = question.lines().filter(|l| parse_option_line(l).is_none()).collect();
        Ok(format!(
            "<Question>{}</Question>\n<Answer>{}</Answer>",
            kept.join("\n").trim(),
            answer.trim()
        ))
    }
}

fn roman(n: usize) -> &'static str {
    ["I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X"][(n - 1) % 10]
}

fn malformed(what: &str) -> BackendError {
    BackendError::Protocol(format!("synthetic oracle could not parse {what} prompt"))
}

fn parse_option_line(line: &str) -> Option<(Label, String)> {
    let mut chars = line.chars();
    let label = Label::from_char(chars.next()?)?;
    let rest = chars.as_str().strip_prefix(". ")?;
    Some((label, rest.to_string()))
}

fn parse_option_lines(block: &str) -> Vec<(Label, String)> {
    block.lines().filter_map(parse_option_line).collect()
}

impl Completion for SyntheticOracle {
    fn complete(&self, params: &SamplingParams, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let prompt_hash = hex::encode(Sha256::digest(request.prompt.as_bytes()));
        let mut rng = seed::derived_rng(
            request.seed,
            &["synthetic", &prompt_hash, &request.sample_index.to_string()],
        );
        match PromptKind::detect(request.prompt) {
            Some(PromptKind::Evaluation) => self.answer(request.prompt, params, &mut rng, request.sample_index),
            Some(PromptKind::Generation) => self.generate(request.prompt, &mut rng),
            Some(PromptKind::SingleRoundRewrite) => self.rewrite_all(request.prompt, &mut rng),
            Some(PromptKind::Equivalence) => self.judge(request.prompt),
            Some(PromptKind::Expansion) => self.expand(request.prompt, &mut rng),
            Some(PromptKind::Convertibility) => self.convertibility(request.prompt),
            Some(PromptKind::Conversion) => self.convert(request.prompt),
            None => Err(BackendError::Protocol(
                "synthetic oracle received an unknown prompt".into(),
            )),
        }
    }
}
