mod common;

use std::sync::Arc;

use common::{backends, label, params, trap_world};
use idc_core::backend::prompts::PromptKind;
use idc_core::backend::{Backend, BackendError, Completion, CompletionRequest, SamplingParams, SyntheticOracleSpec};
use idc_core::dataset::{normalize_ws, McqItem};
use idc_core::idc::{
    curate_dataset, curate_item, finalize, initialize, step, CurationBackends, CurationConfig, RejectReason, StepMode,
};

/// Answers evaluation prompts from a fixed per-sample script of option
/// texts and generation prompts with a fixed list of candidate texts.
struct Scripted {
    /// Text chosen at sample index i (wrapping); must be an option text.
    answers: Vec<&'static str>,
    candidates: Vec<&'static str>,
}

impl Completion for Scripted {
    fn complete(&self, _: &SamplingParams, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
        match PromptKind::detect(req.prompt) {
            Some(PromptKind::Evaluation) => {
                let want = self.answers[req.sample_index as usize % self.answers.len()];
                let line = req
                    .prompt
                    .lines()
                    .find(|l| l.len() > 3 && &l[3..] == want)
                    .map(|l| l[..1].to_string())
                    .unwrap_or_else(|| "none".into());
                Ok(format!("Answer: {line}"))
            }
            Some(PromptKind::Generation) => {
                let existing = req
                    .prompt
                    .split("Existing Distractors (to be replaced): ")
                    .nth(1)
                    .and_then(|r| r.lines().next())
                    .unwrap();
                let slots: serde_json::Map<String, serde_json::Value> = serde_json::from_str(existing).unwrap();
                let map: serde_json::Map<String, serde_json::Value> = slots
                    .keys()
                    .zip(&self.candidates)
                    .map(|(k, c)| (k.clone(), serde_json::Value::from(*c)))
                    .collect();
                Ok(serde_json::json!({"distractors": map, "reasoning": ""}).to_string())
            }
            Some(PromptKind::Equivalence) => Ok("NOT_EQUIVALENT".into()),
            _ => Err(BackendError::Protocol("unexpected prompt".into())),
        }
    }
}

fn scripted(answers: Vec<&'static str>, candidates: Vec<&'static str>) -> CurationBackends {
    let b = Backend::new(params(0.7), Arc::new(Scripted { answers, candidates }), 1);
    CurationBackends {
        generator: b.clone(),
        evaluator: b.clone(),
        judge: b,
    }
}

fn four_way() -> McqItem {
    McqItem::new(
        "s",
        "Scripted stem",
        vec!["da".into(), "ok".into(), "dc".into(), "dd".into()],
        label('B'),
    )
    .unwrap()
}

#[test]
fn initial_pool_keeps_only_chosen_distractors() {
    let b = scripted(vec!["da", "dc", "ok", "ok"], vec![]);
    let state = initialize(&four_way(), &b, &CurationConfig::default(), 0).unwrap();
    assert_eq!(state.pool_texts(), vec!["da", "dc"]);
    assert_eq!(state.pool[0].strength, 0.5);
    assert_eq!(state.history.len(), 1);
    assert_eq!(state.history[0].passrate, 0.5);
}

#[test]
fn fully_solved_item_starts_empty() {
    let b = scripted(vec!["ok"], vec![]);
    let state = initialize(&four_way(), &b, &CurationConfig::default(), 0).unwrap();
    assert!(state.pool.is_empty());
    assert_eq!(state.initial_passrate(), 1.0);
}

#[test]
fn filling_admits_only_effective_candidates() {
    let b = scripted(vec!["ok", "n1", "n2", "ok"], vec!["n1", "n2", "n3"]);
    let config = CurationConfig::default();
    let mut state = initialize(&four_way(), &b, &config, 0).unwrap();
    assert!(state.pool.is_empty());
    step(&mut state, &b, &config).unwrap();
    assert_eq!(state.pool_texts(), vec!["n1", "n2"]);
    let record = state.trace.last().unwrap();
    assert_eq!(record.mode, StepMode::Fill);
    assert_eq!(record.candidates, vec!["n1", "n2", "n3"]);
    assert_eq!(record.rejected[0].reason, RejectReason::Ineffective);
    assert_eq!(state.history.len(), 2);
    assert!(!state.is_full());
}

#[test]
fn equal_strength_does_not_replace() {
    let item = McqItem::new("t", "Two-way stem", vec!["ok".into(), "old".into()], label('A')).unwrap();
    // Sample 0 picks the second option whatever it is; the rest are correct.
    struct SecondOption;
    impl Completion for SecondOption {
        fn complete(&self, _: &SamplingParams, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
            match PromptKind::detect(req.prompt) {
                Some(PromptKind::Evaluation) => Ok(if req.sample_index == 0 { "B" } else { "A" }.into()),
                Some(PromptKind::Generation) => Ok(r#"{"distractors":{"B":"new"},"reasoning":""}"#.into()),
                _ => Ok("NOT_EQUIVALENT".into()),
            }
        }
    }
    let backend = Backend::new(params(0.7), Arc::new(SecondOption), 0);
    let b = CurationBackends {
        generator: backend.clone(),
        evaluator: backend.clone(),
        judge: backend,
    };
    let config = CurationConfig::default();
    let mut state = initialize(&item, &b, &config, 0).unwrap();
    assert!(state.is_full());
    step(&mut state, &b, &config).unwrap();
    assert_eq!(state.pool_texts(), vec!["old"]);
    assert_eq!(
        state.trace.last().unwrap().rejected[0].reason,
        RejectReason::NotStronger
    );
    assert_eq!(state.consecutive_failed_replacements, 1);
}

#[test]
fn generation_failure_is_a_recorded_noop() {
    struct Broken;
    impl Completion for Broken {
        fn complete(&self, _: &SamplingParams, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
            match PromptKind::detect(req.prompt) {
                Some(PromptKind::Evaluation) => Ok("A".into()),
                _ => Ok("not json".into()),
            }
        }
    }
    let backend = Backend::new(params(0.7), Arc::new(Broken), 1);
    let b = CurationBackends {
        generator: backend.clone(),
        evaluator: backend.clone(),
        judge: backend,
    };
    let config = CurationConfig::default();
    let outcome = curate_item(&four_way(), &b, &config, 0).unwrap();
    assert_eq!(outcome.generation_rounds, 7);
    assert_eq!(outcome.noop_rounds, 7);
    assert_eq!(outcome.history.len(), 8);
    assert!(outcome.log[1].note.as_deref().unwrap().starts_with("generation failed"));
    assert_eq!(outcome.final_item.n_options(), 4);
}

#[test]
fn guard_rejects_alias_of_correct_answer() {
    let stem = "A 70-year-old woman has jaw claudication and a tender temporal artery. Diagnosis?".to_string();
    let item = McqItem::new(
        "gca",
        stem.clone(),
        vec![
            "Giant cell arteritis".into(),
            "Migraine".into(),
            "Cluster headache".into(),
        ],
        label('A'),
    )
    .unwrap();
    let spec = SyntheticOracleSpec {
        equivalences: vec![("Giant cell arteritis".into(), "Temporal arteritis".into())],
        candidates: [(
            stem.clone(),
            vec![
                "Temporal arteritis".into(),
                "Trigeminal neuralgia".into(),
                "Polymyalgia rheumatica".into(),
            ],
        )]
        .into(),
        weights: [(
            stem,
            [
                ("Giant cell arteritis".to_string(), 1.0),
                ("Temporal arteritis".to_string(), 5.0),
            ]
            .into(),
        )]
        .into(),
        fallback_weight: Some(0.3),
        ..Default::default()
    };
    let b = backends(&spec);
    let outcome = curate_item(&item, &b, &CurationConfig::default(), 1).unwrap();
    assert!(outcome
        .rejected
        .iter()
        .any(|r| r.text == "Temporal arteritis" && r.reason == RejectReason::SemanticEquivalent));
    assert!(!outcome.final_item.options.iter().any(|t| t == "Temporal arteritis"));
}

#[test]
fn state_machine_invariants_hold_on_synthetic_items() {
    let world = trap_world(60, 4, 3);
    let b = backends(&world.spec);
    let config = CurationConfig::default();
    for item in &world.items {
        let mut state = initialize(item, &b, &config, 9).unwrap();
        let correct = normalize_ws(item.correct_text());
        while !state.is_done(&config) {
            let before = state.pool.clone();
            step(&mut state, &b, &config).unwrap();
            assert!(state.pool.len() <= state.target_distractors);
            assert!(state.pool.iter().all(|e| normalize_ws(&e.text) != correct));
            assert_eq!(state.history.len(), state.iteration + 1);
            let record = state.trace.last().unwrap();
            if record.mode == StepMode::Replace {
                if let Some(removed) = &record.replaced {
                    let weak = before.iter().find(|e| &e.text == removed).unwrap();
                    let added = state.pool.last().unwrap();
                    assert!(added.strength > weak.strength);
                    assert!(before.iter().all(|e| e.strength >= weak.strength));
                }
            }
            for entry in state.pool.iter().filter(|e| !before.iter().any(|b| b.text == e.text)) {
                assert!(entry.strength > 0.0);
            }
        }
        let outcome = finalize(&state).unwrap();
        let max = state.history.iter().map(|s| s.pool.len()).max().unwrap();
        assert_eq!(outcome.effective_count, max);
        assert!(state
            .history
            .iter()
            .filter(|s| s.pool.len() == max)
            .all(|s| s.passrate >= outcome.final_passrate));
        assert_eq!(outcome.final_item.n_options(), item.n_options());
        assert_eq!(outcome.final_item.correct_text(), item.correct_text());
    }
}

#[test]
fn curation_finds_the_trap_and_lowers_passrate() {
    let world = trap_world(100, 4, 17);
    let b = backends(&world.spec);
    let run = curate_dataset(&world.items, &b, &CurationConfig::default(), 5).unwrap();
    assert_eq!(run.report.curated, 100);
    assert_eq!(run.report.generation_rounds, 700);
    let hits = run
        .outcomes
        .iter()
        .zip(&world.traps)
        .filter(|(o, trap)| o.final_item.options.contains(trap) && o.final_passrate <= o.initial_passrate)
        .count();
    assert!(hits >= 99, "trap kept in {hits}/100");
    assert!(run.report.mean_final_passrate < run.report.mean_initial_passrate);
}

#[test]
fn curation_is_deterministic() {
    let world = trap_world(20, 4, 2);
    let b = backends(&world.spec);
    let config = CurationConfig::default();
    let first = curate_dataset(&world.items, &b, &config, 1).unwrap();
    let second = curate_dataset(&world.items, &b, &config, 1).unwrap();
    assert_eq!(first.outcomes, second.outcomes);
    assert_eq!(first.report, second.report);
}

#[test]
fn smaller_target_keeps_strongest_originals() {
    let b = scripted(vec!["da", "dc", "dc", "ok"], vec![]);
    let config = CurationConfig {
        target_option_count: Some(2),
        ..Default::default()
    };
    let state = initialize(&four_way(), &b, &config, 0).unwrap();
    assert_eq!(state.pool_texts(), vec!["dc"]);
    assert!(initialize(
        &four_way(),
        &b,
        &CurationConfig {
            target_option_count: Some(5),
            ..Default::default()
        },
        0
    )
    .is_err());
}

#[test]
fn early_stop_ends_after_failed_replacements() {
    let world = trap_world(5, 4, 8);
    let b = backends(&world.spec);
    let config = CurationConfig {
        max_iterations: 50,
        early_stop_after: Some(2),
        ..Default::default()
    };
    for item in &world.items {
        let outcome = curate_item(item, &b, &config, 0).unwrap();
        assert!(outcome.generation_rounds < 50);
    }
}
