#![allow(dead_code)]

use std::collections::BTreeMap;

use idc_core::backend::{Backend, SamplingParams, SyntheticOracleSpec};
use idc_core::dataset::{Label, McqItem};
use idc_core::idc::CurationBackends;
use idc_core::seed;
use rand::Rng;

pub fn params(temperature: f64) -> SamplingParams {
    SamplingParams {
        model_name: "synthetic".into(),
        temperature,
        top_p: 1.0,
        max_tokens: 256,
    }
}

pub fn backends(spec: &SyntheticOracleSpec) -> CurationBackends {
    let b = Backend::synthetic(spec.clone(), params(0.7)).unwrap();
    CurationBackends {
        generator: b.clone(),
        evaluator: b.clone(),
        judge: b,
    }
}

pub fn label(c: char) -> Label {
    Label::from_char(c).unwrap()
}

/// Items with weak original distractors and a candidate list holding one
/// dominant trap per item.
pub struct TrapWorld {
    pub items: Vec<McqItem>,
    pub spec: SyntheticOracleSpec,
    pub traps: Vec<String>,
}

pub fn trap_world(n_items: usize, n_options: usize, world_seed: u64) -> TrapWorld {
    let mut rng = seed::derived_rng(world_seed, &["trap-world"]);
    let mut spec = SyntheticOracleSpec {
        fallback_weight: Some(0.1),
        ..Default::default()
    };
    let mut items = Vec::new();
    let mut traps = Vec::new();
    for i in 0..n_items {
        let stem = format!("Synthetic question {i}: which option is correct?");
        let correct = format!("Answer {i}");
        let position = rng.gen_range(0..n_options);
        let mut options: Vec<String> = (0..n_options - 1).map(|j| format!("Original {i}-{j}")).collect();
        options.insert(position, correct.clone());
        let mut weights: BTreeMap<String, f64> = options.iter().map(|t| (t.clone(), 0.05)).collect();
        weights.insert(correct, 1.0);
        let trap_at = rng.gen_range(0..5);
        let candidates: Vec<String> = (0..5).map(|c| format!("Candidate {i}-{c}")).collect();
        for (c, text) in candidates.iter().enumerate() {
            weights.insert(text.clone(), if c == trap_at { 6.0 } else { 0.15 });
        }
        traps.push(candidates[trap_at].clone());
        spec.weights.insert(stem.clone(), weights);
        spec.candidates.insert(stem.clone(), candidates);
        items.push(McqItem::new(format!("item-{i}"), stem, options, Label::from_index(position).unwrap()).unwrap());
    }
    TrapWorld { items, spec, traps }
}
