#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use idc_core::backend::{Backend, SamplingParams, SyntheticOracleSpec};
use idc_core::dataset::{Label, McqItem};
use idc_core::idc::CurationBackends;
use idc_core::seed;
use rand::Rng;

pub fn idc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idc"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn arg(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

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

/// Items with weak original distractors and a generator candidate list
/// holding one dominant trap distractor per item.
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

/// Writes a synthetic-oracle spec and a one-backend run config into `dir`.
pub fn synthetic_config(dir: &Path, spec: &SyntheticOracleSpec, extra: &str) -> PathBuf {
    let spec_path = dir.join("oracle.json");
    std::fs::write(&spec_path, serde_json::to_string(spec).unwrap()).unwrap();
    let config = format!(
        "[backends.oracle]\nendpoint_url = \"synthetic\"\nmodel_name = \"synthetic-oracle\"\nsynthetic_spec = {:?}\n{extra}",
        spec_path.display().to_string()
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    path
}

/// Writes an MMLU-Pro style export with `unique` distinct 10-option items,
/// `duplicates` repeats of earlier items (with extra whitespace, so only
/// normalization catches them), and `short` items with fewer
/// than 10 options. Returns the line count.
pub fn mmlu_pro_export(path: &Path, unique: usize, duplicates: usize, short: usize, seed_value: u64) -> usize {
    use std::io::Write;
    let mut rng = seed::derived_rng(seed_value, &["mmlu-export"]);
    let mut lines = Vec::new();
    let row = |id: usize, stem: String, options: Vec<String>, answer: usize| {
        serde_json::json!({
            "question_id": id,
            "question": stem,
            "options": options,
            "answer": ((b'A' + answer as u8) as char).to_string(),
            "category": "synthetic",
        })
        .to_string()
    };
    let mut originals = Vec::new();
    for i in 0..unique {
        let options: Vec<String> = (0..10).map(|j| format!("option {i}.{j}")).collect();
        let answer = rng.gen_range(0..10);
        originals.push((format!("Question number {i}?"), options.clone(), answer));
        lines.push(row(i, format!("Question number {i}?"), options, answer));
    }
    for d in 0..duplicates {
        let (stem, options, answer) = &originals[rng.gen_range(0..unique)];
        let stem = format!("  {}  ", stem.replace(' ', "   "));
        lines.push(row(unique + d, stem, options.clone(), *answer));
    }
    for s in 0..short {
        let n = rng.gen_range(3..10);
        let options: Vec<String> = (0..n).map(|j| format!("short {s}.{j}")).collect();
        lines.push(row(unique + duplicates + s, format!("Short question {s}?"), options, 0));
    }
    // Originals come first so that dedupe keeps them; the rest is mixed.
    let mut order: Vec<usize> = (0..lines.len()).collect();
    rand::seq::SliceRandom::shuffle(&mut order[unique..], &mut rng);
    let mut file = std::fs::File::create(path).unwrap();
    for i in order {
        writeln!(file, "{}", lines[i]).unwrap();
    }
    lines.len()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn read_items(path: &Path) -> Vec<McqItem> {
    idc_core::dataset::read_jsonl(path).unwrap()
}

pub fn write_items(path: &Path, items: &[McqItem]) {
    idc_core::dataset::emit_jsonl(items, path).unwrap();
}
