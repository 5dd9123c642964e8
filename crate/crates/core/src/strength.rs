//! Empirical distractor strength: how often each distractor is chosen among
//! a reference model's incorrect answers, plus passrate and solve-all
//! statistics and strongest/weakest/random distractor selection.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{AnswerSample, Backend};
use crate::dataset::{Label, McqItem};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistractorStrength {
    pub pick_count: usize,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthProfile {
    pub item_id: String,
    pub k: usize,
    /// Parsed answers that named a distractor.
    pub n_err: usize,
    pub per_distractor: BTreeMap<Label, DistractorStrength>,
    pub parse_failures: usize,
    /// Fraction of the `k` samples that chose the correct option.
    pub passrate: f64,
}

impl StrengthProfile {
    pub fn strength(&self, label: Label) -> f64 {
        self.per_distractor.get(&label).map_or(0.0, |d| d.strength)
    }

    pub fn correct_count(&self) -> usize {
        self.k - self.n_err - self.parse_failures
    }

    /// Set when every sample failed to parse.
    pub fn all_parse_failed(&self) -> bool {
        self.k > 0 && self.parse_failures == self.k
    }

    pub fn effective_labels(&self) -> Vec<Label> {
        self.per_distractor
            .iter()
            .filter(|(_, d)| d.strength > 0.0)
            .map(|(l, _)| *l)
            .collect()
    }

    pub fn report(&self) -> StrengthReport {
        StrengthReport {
            id: self.item_id.clone(),
            k: self.k,
            n_err: self.n_err,
            strengths: self.per_distractor.iter().map(|(l, d)| (*l, d.strength)).collect(),
            passrate: self.passrate,
            parse_failures: self.parse_failures,
        }
    }
}

/// One line of the strength report JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthReport {
    pub id: String,
    pub k: usize,
    pub n_err: usize,
    pub strengths: BTreeMap<Label, f64>,
    pub passrate: f64,
    pub parse_failures: usize,
}

/// Builds a profile from already-sampled answers.
///
/// Unparseable samples count against the passrate but are left out of
/// `n_err`, so strengths are computed over distractor picks only.
pub fn profile_from_samples(item: &McqItem, samples: &[AnswerSample]) -> Result<StrengthProfile> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("answer samples"));
    }
    let mut picks: BTreeMap<Label, usize> = item.distractor_labels().into_iter().map(|l| (l, 0)).collect();
    let mut correct = 0;
    let mut parse_failures = 0;
    for sample in samples {
        match sample.parsed_label {
            None => parse_failures += 1,
            Some(l) if l == item.correct => correct += 1,
            Some(l) => *picks.get_mut(&l).ok_or(Error::UnknownLabel(l))? += 1,
        }
    }
    let k = samples.len();
    let n_err = k - correct - parse_failures;
    let per_distractor = picks
        .into_iter()
        .map(|(label, pick_count)| {
            let strength = if n_err > 0 {
                pick_count as f64 / n_err as f64
            } else {
                0.0
            };
            (label, DistractorStrength { pick_count, strength })
        })
        .collect();
    Ok(StrengthProfile {
        item_id: item.id.clone(),
        k,
        n_err,
        per_distractor,
        parse_failures,
        passrate: correct as f64 / k as f64,
    })
}

/// Samples `k` answers and computes the item's strength profile.
pub fn estimate_strength(item: &McqItem, backend: &Backend, k: usize, seed: u64) -> Result<StrengthProfile> {
    estimate_strength_with_samples(item, backend, k, seed).map(|(profile, _)| profile)
}

/// Like [`estimate_strength`], also returning the raw samples.
pub fn estimate_strength_with_samples(
    item: &McqItem,
    backend: &Backend,
    k: usize,
    seed: u64,
) -> Result<(StrengthProfile, Vec<AnswerSample>)> {
    let samples = backend.sample_answers(item, k, seed)?;
    let profile = profile_from_samples(item, &samples)?;
    if profile.all_parse_failed() {
        tracing::warn!(item = %item.id, "all {k} samples failed to parse; strengths are zero");
    }
    Ok((profile, samples))
}

/// Estimates every item in parallel; per-item seeds derive from the item id.
pub fn estimate_dataset(items: &[McqItem], backend: &Backend, k: usize, seed: u64) -> Vec<Result<StrengthProfile>> {
    items
        .par_iter()
        .map(|item| estimate_strength(item, backend, k, seed::derive(seed, &["strength", &item.id])))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Random,
    Strongest,
    Weakest,
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SelectionMode::Random),
            "strongest" | "strong" => Ok(SelectionMode::Strongest),
            "weakest" | "weak" => Ok(SelectionMode::Weakest),
            other => Err(Error::InvalidArgument(format!("unknown selection mode {other:?}"))),
        }
    }
}

/// Reduces an item to two options: the correct answer and one distractor
/// chosen by `mode`. Ties go to the lowest original label. The correct
/// answer's position is drawn uniformly from the seed.
pub fn select_distractor(item: &McqItem, profile: &StrengthProfile, mode: SelectionMode, seed: u64) -> Result<McqItem> {
    let labels = item.distractor_labels();
    let profile_labels: Vec<Label> = profile.per_distractor.keys().copied().collect();
    if profile.item_id != item.id || profile_labels != labels {
        return Err(Error::ProfileMismatch {
            item_id: item.id.clone(),
            profile_id: profile.item_id.clone(),
        });
    }
    let mut rng = seed::derived_rng(seed, &["select", &item.id]);
    let first = *labels
        .first()
        .ok_or_else(|| Error::invalid_item(&item.id, "no distractors"))?;
    let chosen = match mode {
        SelectionMode::Random => *labels.choose(&mut rng).expect("nonempty"),
        SelectionMode::Strongest => labels.iter().copied().fold(first, |best, l| {
            if profile.strength(l) > profile.strength(best) {
                l
            } else {
                best
            }
        }),
        SelectionMode::Weakest => labels.iter().copied().fold(first, |best, l| {
            if profile.strength(l) < profile.strength(best) {
                l
            } else {
                best
            }
        }),
    };
    let text = item.option(chosen).ok_or(Error::UnknownLabel(chosen))?.to_string();
    let position = rng.gen_range(0..2);
    McqItem::assemble(item, item.correct_text(), &[text], position)
}

/// Fraction of items answered correctly in every sample.
pub fn solve_all_ratio(profiles: &[StrengthProfile]) -> Result<f64> {
    if profiles.is_empty() {
        return Err(Error::EmptyInput("strength profiles"));
    }
    let solved = profiles
        .iter()
        .filter(|p| p.n_err == 0 && p.parse_failures == 0)
        .count();
    Ok(solved as f64 / profiles.len() as f64)
}
