//! Iterative distractor curation.
//!
//! Each item runs a small state machine. The effective pool holds
//! distractors that the evaluator picked at least once. While the pool is
//! short of the target size, new candidates are generated to fill it; once
//! full, the weakest member is challenged by one new candidate per round and
//! replaced only on a strict strength improvement. Every round records a
//! (pool, passrate) snapshot; the final option set comes from the largest
//! pool with the lowest passrate, padded with original distractors.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, GenerationMode, Verdict};
use crate::dataset::{normalize_ws, Label, McqItem};
use crate::error::{Error, Result};
use crate::seed;
use crate::strength::{estimate_strength, StrengthProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    /// Iteration budget T.
    pub max_iterations: usize,
    /// Answers sampled per evaluation, K.
    pub k_samples: usize,
    /// Final option count N; `None` keeps each item's original count.
    pub target_option_count: Option<usize>,
    pub equivalence_guard: bool,
    /// Stop once the pool is full and this many replacement attempts in a
    /// row have failed. `None` always runs the full budget.
    pub early_stop_after: Option<usize>,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            max_iterations: 7,
            k_samples: 8,
            target_option_count: None,
            equivalence_guard: true,
            early_stop_after: None,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if self.k_samples == 0 {
            return Err(Error::InvalidArgument("k_samples must be at least 1".into()));
        }
        if matches!(self.target_option_count, Some(n) if n < 2) {
            return Err(Error::InvalidArgument("target_option_count must be at least 2".into()));
        }
        if self.early_stop_after == Some(0) {
            return Err(Error::InvalidArgument("early_stop_after must be at least 1".into()));
        }
        Ok(())
    }
}

/// The three model roles used during curation.
#[derive(Debug, Clone)]
pub struct CurationBackends {
    pub generator: Backend,
    pub evaluator: Backend,
    pub judge: Backend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Same text as the correct answer up to case and whitespace.
    ExactMatch,
    /// The judge found it equivalent to the correct answer.
    SemanticEquivalent,
    /// Survived the guard but no evaluator sample chose it.
    Ineffective,
    /// A replacement candidate that was not strictly stronger.
    NotStronger,
}

impl RejectReason {
    pub fn is_equivalence(self) -> bool {
        matches!(self, RejectReason::ExactMatch | RejectReason::SemanticEquivalent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub text: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Original { label: Label },
    Generated { iteration: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub text: String,
    /// Strength from the most recent evaluation that included this text.
    pub strength: f64,
    pub origin: Origin,
    pub insertion: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub pool: Vec<String>,
    pub passrate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    Init,
    Fill,
    Replace,
}

/// One line of the per-item curation trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: String,
    pub iteration: usize,
    pub mode: StepMode,
    pub candidates: Vec<String>,
    pub admitted: Vec<String>,
    pub rejected: Vec<Rejection>,
    /// Passrate measured this round; `None` when nothing was evaluated.
    pub passrate: Option<f64>,
    pub pool: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replaced: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationState {
    pub item: McqItem,
    /// Target distractor count K_d = N - 1.
    pub target_distractors: usize,
    pub pool: Vec<PoolEntry>,
    pub history: Vec<Snapshot>,
    pub iteration: usize,
    pub rejected: Vec<Rejection>,
    pub trace: Vec<TraceRecord>,
    /// Every text proposed so far; never offered again.
    pub proposed: Vec<String>,
    pub consecutive_failed_replacements: usize,
    pub noop_rounds: usize,
    next_insertion: usize,
    item_seed: u64,
}

impl CurationState {
    pub fn pool_texts(&self) -> Vec<String> {
        self.pool.iter().map(|e| e.text.clone()).collect()
    }

    pub fn is_full(&self) -> bool {
        self.pool.len() >= self.target_distractors
    }

    pub fn initial_passrate(&self) -> f64 {
        self.history[0].passrate
    }

    fn last_passrate(&self) -> f64 {
        self.history.last().expect("history starts non-empty").passrate
    }

    fn push_entry(&mut self, text: String, strength: f64, origin: Origin) {
        self.pool.push(PoolEntry {
            text,
            strength,
            origin,
            insertion: self.next_insertion,
        });
        self.next_insertion += 1;
    }

    fn contains(&self, text: &str) -> bool {
        let norm = normalize_ws(text);
        self.pool.iter().any(|e| normalize_ws(&e.text) == norm)
    }

    /// True when the budget is spent or the early-stop rule fires.
    pub fn is_done(&self, config: &CurationConfig) -> bool {
        self.iteration >= config.max_iterations
            || matches!(config.early_stop_after, Some(l) if self.is_full() && self.consecutive_failed_replacements >= l)
    }

    /// N-option layout used for generation prompts: correct answer at its
    /// original position, pool members first, then unused originals.
    fn working_layout(&self) -> Result<(McqItem, Vec<Label>)> {
        let n = self.target_distractors + 1;
        let mut distractors = self.pool_texts();
        let pool_len = distractors.len();
        for (_, text) in self.item.distractors() {
            if distractors.len() == self.target_distractors {
                break;
            }
            if !self.contains(text) {
                distractors.push(text.to_string());
            }
        }
        let position = self.item.correct.index().min(n - 1);
        let layout = McqItem::assemble(&self.item, self.item.correct_text(), &distractors, position)?;
        let slot_positions = (pool_len..distractors.len()).map(|i| if i < position { i } else { i + 1 });
        let slots = slot_positions
            .map(|i| Label::from_index(i).expect("within alphabet"))
            .collect();
        Ok((layout, slots))
    }

    fn avoid_list(&self) -> Vec<String> {
        let mut avoid: Vec<String> = self.item.distractors().map(|(_, t)| t.to_string()).collect();
        for text in self.pool.iter().map(|e| &e.text).chain(&self.proposed) {
            if !avoid.contains(text) {
                avoid.push(text.clone());
            }
        }
        avoid
    }
}

/// Builds an evaluation item with the correct answer at its original
/// position (clamped) and the given distractors in order.
fn evaluation_item(item: &McqItem, distractors: &[String]) -> Result<McqItem> {
    let position = item.correct.index().min(distractors.len());
    McqItem::assemble(item, item.correct_text(), distractors, position)
}

/// Strength of each distractor text in an evaluated layout.
fn strengths_by_text(eval: &McqItem, profile: &StrengthProfile) -> Vec<(String, f64)> {
    eval.distractors()
        .map(|(l, t)| (t.to_string(), profile.strength(l)))
        .collect()
}

fn lookup(strengths: &[(String, f64)], text: &str) -> f64 {
    strengths.iter().find(|(t, _)| t == text).map_or(0.0, |(_, s)| *s)
}

/// Evaluates the original item and seeds the pool with every original
/// distractor that drew at least one incorrect answer.
pub fn initialize(
    item: &McqItem,
    backends: &CurationBackends,
    config: &CurationConfig,
    seed: u64,
) -> Result<CurationState> {
    config.validate()?;
    item.validate()?;
    let n = config.target_option_count.unwrap_or(item.n_options());
    if n < 2 || n > item.n_options() {
        return Err(Error::InvalidArgument(format!(
            "target option count {n} must be between 2 and the item's {} options",
            item.n_options()
        )));
    }
    let item_seed = seed::derive(seed, &["idc", &item.id]);
    let profile = estimate_strength(
        item,
        &backends.evaluator,
        config.k_samples,
        seed::derive(item_seed, &["eval", "0"]),
    )?;
    let mut effective: Vec<(Label, String, f64)> = item
        .distractors()
        .map(|(l, t)| (l, t.to_string(), profile.strength(l)))
        .filter(|(_, _, s)| *s > 0.0)
        .collect();
    if effective.len() > n - 1 {
        effective.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        effective.truncate(n - 1);
        effective.sort_by_key(|e| e.0);
    }
    let mut state = CurationState {
        item: item.clone(),
        target_distractors: n - 1,
        pool: Vec::new(),
        history: Vec::new(),
        iteration: 0,
        rejected: Vec::new(),
        trace: Vec::new(),
        proposed: Vec::new(),
        consecutive_failed_replacements: 0,
        noop_rounds: 0,
        next_insertion: 0,
        item_seed,
    };
    for (label, text, strength) in effective {
        state.push_entry(text, strength, Origin::Original { label });
    }
    state.history.push(Snapshot {
        pool: state.pool_texts(),
        passrate: profile.passrate,
    });
    state.trace.push(TraceRecord {
        id: item.id.clone(),
        iteration: 0,
        mode: StepMode::Init,
        candidates: Vec::new(),
        admitted: state.pool_texts(),
        rejected: Vec::new(),
        passrate: Some(profile.passrate),
        pool: state.pool_texts(),
        replaced: None,
        note: None,
    });
    Ok(state)
}

/// Rejects candidates that restate the correct answer. Exact matches are
/// caught without a judge call.
fn guard(
    state: &CurationState,
    backends: &CurationBackends,
    config: &CurationConfig,
    candidates: &[String],
) -> Result<(Vec<String>, Vec<Rejection>)> {
    let correct = state.item.correct_text();
    let correct_folded = normalize_ws(correct).to_lowercase();
    let mut survivors = Vec::new();
    let mut rejected = Vec::new();
    for text in candidates {
        if normalize_ws(text).to_lowercase() == correct_folded {
            rejected.push(Rejection {
                text: text.clone(),
                reason: RejectReason::ExactMatch,
            });
        } else if config.equivalence_guard
            && backends.judge.judge_equivalence(&state.item.stem, correct, text)? == Verdict::Equivalent
        {
            rejected.push(Rejection {
                text: text.clone(),
                reason: RejectReason::SemanticEquivalent,
            });
        } else {
            survivors.push(text.clone());
        }
    }
    Ok((survivors, rejected))
}

/// Records a round in which nothing was evaluated.
fn noop(state: &mut CurationState, mode: StepMode, candidates: Vec<String>, rejected: Vec<Rejection>, note: String) {
    let passrate = state.last_passrate();
    state.history.push(Snapshot {
        pool: state.pool_texts(),
        passrate,
    });
    state.noop_rounds += 1;
    if mode == StepMode::Replace {
        state.consecutive_failed_replacements += 1;
    }
    state.rejected.extend(rejected.iter().cloned());
    state.trace.push(TraceRecord {
        id: state.item.id.clone(),
        iteration: state.iteration,
        mode,
        candidates,
        admitted: Vec::new(),
        rejected,
        passrate: None,
        pool: state.pool_texts(),
        replaced: None,
        note: Some(note),
    });
}

/// Runs one filling or replacement round.
pub fn step(state: &mut CurationState, backends: &CurationBackends, config: &CurationConfig) -> Result<()> {
    if state.iteration >= config.max_iterations {
        return Err(Error::InvalidArgument(format!(
            "item {} already ran its {} iterations",
            state.item.id, config.max_iterations
        )));
    }
    state.iteration += 1;
    let t = state.iteration.to_string();
    let gen_seed = seed::derive(state.item_seed, &["gen", &t]);
    let eval_seed = seed::derive(state.item_seed, &["eval", &t]);
    let mode = if state.is_full() {
        StepMode::Replace
    } else {
        StepMode::Fill
    };

    let weak_index = (mode == StepMode::Replace).then(|| {
        state
            .pool
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.strength.total_cmp(&b.strength).then(a.insertion.cmp(&b.insertion)))
            .map(|(i, _)| i)
            .expect("full pool is nonempty")
    });

    let (layout, mut slots) = state.working_layout()?;
    if let Some(weak) = weak_index {
        let position = layout.correct.index();
        let index = if weak < position { weak } else { weak + 1 };
        slots = vec![Label::from_index(index).expect("within alphabet")];
    }

    let generated = backends.generator.generate_distractors(
        &layout,
        &slots,
        GenerationMode::Replace,
        &state.avoid_list(),
        gen_seed,
    );
    let candidates: Vec<String> = match generated {
        Ok(result) => slots
            .iter()
            .filter_map(|s| result.distractors.get(s).cloned())
            .collect(),
        Err(Error::Backend(BackendError::GenerationExhausted { reason, .. })) => {
            noop(
                state,
                mode,
                Vec::new(),
                Vec::new(),
                format!("generation failed: {reason}"),
            );
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    state.proposed.extend(candidates.iter().cloned());

    let (survivors, mut rejected) = guard(state, backends, config, &candidates)?;

    match weak_index {
        None => {
            let mut distractors = state.pool_texts();
            distractors.extend(survivors.iter().cloned());
            if distractors.is_empty() {
                noop(
                    state,
                    mode,
                    candidates,
                    rejected,
                    "no candidate survived the equivalence guard".into(),
                );
                return Ok(());
            }
            let eval = evaluation_item(&state.item, &distractors)?;
            let profile = estimate_strength(&eval, &backends.evaluator, config.k_samples, eval_seed)?;
            let strengths = strengths_by_text(&eval, &profile);
            for entry in &mut state.pool {
                entry.strength = lookup(&strengths, &entry.text);
            }
            let mut admitted = Vec::new();
            for text in survivors {
                let s = lookup(&strengths, &text);
                if s > 0.0 && !state.is_full() {
                    state.push_entry(
                        text.clone(),
                        s,
                        Origin::Generated {
                            iteration: state.iteration,
                        },
                    );
                    admitted.push(text);
                } else {
                    rejected.push(Rejection {
                        text,
                        reason: RejectReason::Ineffective,
                    });
                }
            }
            state.history.push(Snapshot {
                pool: state.pool_texts(),
                passrate: profile.passrate,
            });
            state.rejected.extend(rejected.iter().cloned());
            state.trace.push(TraceRecord {
                id: state.item.id.clone(),
                iteration: state.iteration,
                mode,
                candidates,
                admitted,
                rejected,
                passrate: Some(profile.passrate),
                pool: state.pool_texts(),
                replaced: None,
                note: None,
            });
        }
        Some(weak) => {
            let Some(new_text) = survivors.into_iter().next() else {
                noop(
                    state,
                    mode,
                    candidates,
                    rejected,
                    "no candidate survived the equivalence guard".into(),
                );
                return Ok(());
            };
            let mut distractors = state.pool_texts();
            distractors[weak] = new_text.clone();
            let eval = evaluation_item(&state.item, &distractors)?;
            let profile = estimate_strength(&eval, &backends.evaluator, config.k_samples, eval_seed)?;
            let strengths = strengths_by_text(&eval, &profile);
            let weak_strength = state.pool[weak].strength;
            let new_strength = lookup(&strengths, &new_text);
            for (i, entry) in state.pool.iter_mut().enumerate() {
                if i != weak {
                    entry.strength = lookup(&strengths, &entry.text);
                }
            }
            let mut admitted = Vec::new();
            let mut replaced = None;
            if new_strength > weak_strength {
                let removed = state.pool.remove(weak);
                state.push_entry(
                    new_text.clone(),
                    new_strength,
                    Origin::Generated {
                        iteration: state.iteration,
                    },
                );
                admitted.push(new_text);
                replaced = Some(removed.text);
                state.consecutive_failed_replacements = 0;
            } else {
                rejected.push(Rejection {
                    text: new_text,
                    reason: RejectReason::NotStronger,
                });
                state.consecutive_failed_replacements += 1;
            }
            state.history.push(Snapshot {
                pool: state.pool_texts(),
                passrate: profile.passrate,
            });
            state.rejected.extend(rejected.iter().cloned());
            state.trace.push(TraceRecord {
                id: state.item.id.clone(),
                iteration: state.iteration,
                mode,
                candidates,
                admitted,
                rejected,
                passrate: Some(profile.passrate),
                pool: state.pool_texts(),
                replaced,
                note: None,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationOutcome {
    pub final_item: McqItem,
    pub selected_snapshot_index: usize,
    pub effective_count: usize,
    pub final_passrate: f64,
    pub initial_passrate: f64,
    pub padded_from_original: Vec<String>,
    pub generation_rounds: usize,
    pub noop_rounds: usize,
    pub rejected: Vec<Rejection>,
    pub history: Vec<Snapshot>,
    pub log: Vec<TraceRecord>,
}

impl CurationOutcome {
    pub fn equivalence_rejections(&self) -> usize {
        self.rejected.iter().filter(|r| r.reason.is_equivalence()).count()
    }
}

/// Index of the largest pool with the lowest passrate; earliest on ties.
pub fn select_snapshot(history: &[Snapshot]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, snap) in history.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let current = &history[b];
                let larger = snap.pool.len() > current.pool.len();
                let same_size_lower = snap.pool.len() == current.pool.len() && snap.passrate < current.passrate;
                if larger || same_size_lower {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Picks the best snapshot, pads it with unused original distractors in
/// label order, and places the correct answer at a seeded position.
pub fn finalize(state: &CurationState) -> Result<CurationOutcome> {
    let index = select_snapshot(&state.history).ok_or(Error::EmptyInput("curation history"))?;
    let snapshot = &state.history[index];
    let mut distractors = snapshot.pool.clone();
    let present: HashSet<String> = distractors.iter().map(|t| normalize_ws(t)).collect();
    let mut padded = Vec::new();
    for (_, text) in state.item.distractors() {
        if distractors.len() >= state.target_distractors {
            break;
        }
        if !present.contains(&normalize_ws(text)) {
            distractors.push(text.to_string());
            padded.push(text.to_string());
        }
    }
    let mut rng = seed::derived_rng(state.item_seed, &["finalize"]);
    let position = rng.gen_range(0..=distractors.len());
    let final_item = McqItem::assemble(&state.item, state.item.correct_text(), &distractors, position)?;
    Ok(CurationOutcome {
        final_item,
        selected_snapshot_index: index,
        effective_count: snapshot.pool.len(),
        final_passrate: snapshot.passrate,
        initial_passrate: state.initial_passrate(),
        padded_from_original: padded,
        generation_rounds: state.iteration,
        noop_rounds: state.noop_rounds,
        rejected: state.rejected.clone(),
        history: state.history.clone(),
        log: state.trace.clone(),
    })
}

/// Runs the full state machine for one item.
pub fn curate_item(
    item: &McqItem,
    backends: &CurationBackends,
    config: &CurationConfig,
    seed: u64,
) -> Result<CurationOutcome> {
    let mut state = initialize(item, backends, config, seed)?;
    while !state.is_done(config) {
        step(&mut state, backends, config)?;
    }
    finalize(&state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub items: usize,
    pub curated: usize,
    pub failed: usize,
    pub generation_rounds: usize,
    pub noop_rounds: usize,
    pub equivalence_rejections: usize,
    pub exact_match_rejections: usize,
    pub affected_questions: usize,
    pub mean_initial_passrate: f64,
    pub mean_final_passrate: f64,
    pub mean_effective_count: f64,
    pub errors: Vec<ItemFailure>,
}

#[derive(Debug, Clone)]
pub struct CurationRun {
    /// Successful outcomes in input order.
    pub outcomes: Vec<CurationOutcome>,
    pub report: CurationReport,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Curates every item independently and in parallel. Per-item failures are
/// recorded in the report instead of aborting the run.
pub fn curate_dataset(
    items: &[McqItem],
    backends: &CurationBackends,
    config: &CurationConfig,
    seed: u64,
) -> Result<CurationRun> {
    config.validate()?;
    let results: Vec<Result<CurationOutcome>> = items
        .par_iter()
        .map(|item| curate_item(item, backends, config, seed))
        .collect();
    let mut outcomes = Vec::with_capacity(items.len());
    let mut errors = Vec::new();
    for (item, result) in items.iter().zip(results) {
        match result {
            Ok(outcome) => outcomes.push(outcome),
            Err(e) => {
                tracing::warn!(item = %item.id, "curation failed: {e}");
                errors.push(ItemFailure {
                    id: item.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let report = CurationReport {
        items: items.len(),
        curated: outcomes.len(),
        failed: errors.len(),
        generation_rounds: outcomes.iter().map(|o| o.generation_rounds).sum(),
        noop_rounds: outcomes.iter().map(|o| o.noop_rounds).sum(),
        equivalence_rejections: outcomes.iter().map(CurationOutcome::equivalence_rejections).sum(),
        exact_match_rejections: outcomes
            .iter()
            .flat_map(|o| &o.rejected)
            .filter(|r| r.reason == RejectReason::ExactMatch)
            .count(),
        affected_questions: outcomes.iter().filter(|o| o.equivalence_rejections() > 0).count(),
        mean_initial_passrate: mean(outcomes.iter().map(|o| o.initial_passrate)),
        mean_final_passrate: mean(outcomes.iter().map(|o| o.final_passrate)),
        mean_effective_count: mean(outcomes.iter().map(|o| o.effective_count as f64)),
        errors,
    };
    Ok(CurationRun { outcomes, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub id: String,
    pub distractor: String,
}

/// Re-judges every final distractor against the correct answer and lists
/// those the judge calls equivalent.
pub fn audit(outcomes: &[CurationOutcome], judge: &Backend) -> Result<Vec<AuditFinding>> {
    let per_item: Vec<Result<Vec<AuditFinding>>> = outcomes
        .par_iter()
        .map(|o| {
            let item = &o.final_item;
            let mut found = Vec::new();
            for (_, text) in item.distractors() {
                if judge.judge_equivalence(&item.stem, item.correct_text(), text)? == Verdict::Equivalent {
                    found.push(AuditFinding {
                        id: item.id.clone(),
                        distractor: text.to_string(),
                    });
                }
            }
            Ok(found)
        })
        .collect();
    let mut all = Vec::new();
    for r in per_item {
        all.extend(r?);
    }
    Ok(all)
}
