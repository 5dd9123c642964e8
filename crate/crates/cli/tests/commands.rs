mod common;

use std::path::Path;

use common::{arg, code, idc, mmlu_pro_export, read_items, read_json, synthetic_config, trap_world, write_items};
use idc_core::backend::SyntheticOracleSpec;
use idc_core::dataset::{Label, McqItem};

fn files_equal(a: &Path, b: &Path, names: &[&str]) {
    for name in names {
        let left = std::fs::read(a.join(name)).unwrap();
        let right = std::fs::read(b.join(name)).unwrap();
        assert!(left == right, "{name} differs between runs");
    }
}

#[test]
fn ingest_dedupes_filters_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    let export = dir.path().join("export.jsonl");
    let lines = mmlu_pro_export(&export, 100, 7, 13, 1);
    let out = dir.path().join("out");
    let run = idc(&[
        "ingest",
        "-i",
        arg(&export),
        "-o",
        arg(&out),
        "--schema",
        "mmlu-pro",
        "--options",
        "10",
        "--split-ratio",
        "0.85",
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "success");
    assert_eq!(manifest["counts"]["lines_read"], lines);
    assert_eq!(manifest["counts"]["duplicates_removed"], 7);
    assert_eq!(manifest["counts"]["option_count_removed"], 13);
    assert_eq!(manifest["counts"]["kept"], 100);
    assert_eq!(manifest["counts"]["train"], 85);
    assert_eq!(manifest["counts"]["test"], 15);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    let train = read_items(&out.join("train.jsonl"));
    assert!(train.iter().all(|i| i.n_options() == 10));
    assert_eq!(train[0].meta["source"], "mmlu-pro");
}

#[test]
fn ingest_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let export = dir.path().join("export.jsonl");
    mmlu_pro_export(&export, 50, 5, 5, 2);
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let run = idc(&[
                "ingest",
                "-i",
                arg(&export),
                "-o",
                arg(&out),
                "--schema",
                "mmlu-pro",
                "--split-ratio",
                "0.5",
            ]);
            assert_eq!(code(&run), 0);
            out
        })
        .collect();
    files_equal(&runs[0], &runs[1], &["train.jsonl", "test.jsonl", "manifest.json"]);
}

#[test]
fn missing_input_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let run = idc(&["ingest", "-i", arg(&dir.path().join("absent.jsonl")), "-o", arg(&out)]);
    assert_eq!(code(&run), 2);
    let entries: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(entries, vec!["manifest.json"]);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "error");
    assert!(manifest["error"].as_str().unwrap().contains("does not exist"));
    let report: serde_json::Value = serde_json::from_slice(&run.stderr).unwrap();
    assert_eq!(report["status"], "error");
}

#[test]
fn invalid_role_exits_2_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let world = trap_world(3, 4, 0);
    let input = dir.path().join("items.jsonl");
    write_items(&input, &world.items);
    let config = synthetic_config(dir.path(), &world.spec, "[roles]\njudge = \"missing\"\n");
    let out = dir.path().join("out");
    let cache = dir.path().join("cache.jsonl");
    let run = idc(&[
        "--config",
        arg(&config),
        "curate",
        "-i",
        arg(&input),
        "-o",
        arg(&out),
        "--cache",
        arg(&cache),
    ]);
    assert_eq!(code(&run), 2);
    assert!(!out.join("curated.jsonl").exists());
    assert!(!cache.exists());
    assert!(read_json(&out.join("manifest.json"))["error"]
        .as_str()
        .unwrap()
        .contains("judge"));
}

#[test]
fn curate_smoke_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let world = trap_world(100, 4, 4);
    let input = dir.path().join("items.jsonl");
    write_items(&input, &world.items);
    let config = synthetic_config(dir.path(), &world.spec, "[seeds]\nglobal = 3\n");
    let outs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let run = idc(&["--config", arg(&config), "curate", "-i", arg(&input), "-o", arg(&out)]);
            assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
            out
        })
        .collect();
    files_equal(
        &outs[0],
        &outs[1],
        &["curated.jsonl", "trace.jsonl", "report.json", "manifest.json"],
    );

    let report = read_json(&outs[0].join("report.json"));
    assert_eq!(report["curated"], 100);
    assert_eq!(report["generation_rounds"], 700);
    assert!(report["mean_final_passrate"].as_f64().unwrap() < report["mean_initial_passrate"].as_f64().unwrap());
    let curated = read_items(&outs[0].join("curated.jsonl"));
    assert_eq!(curated.len(), 100);
    for (before, after) in world.items.iter().zip(&curated) {
        assert_eq!(before.id, after.id);
        assert_eq!(after.n_options(), 4);
        assert_eq!(after.correct_text(), before.correct_text());
    }
    let manifest = read_json(&outs[0].join("manifest.json"));
    assert_eq!(manifest["parameters"]["curation"]["max_iterations"], 7);
    assert_eq!(manifest["seeds"]["global"], 3);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let world = trap_world(4, 4, 5);
    let input = dir.path().join("items.jsonl");
    write_items(&input, &world.items);
    let config = synthetic_config(dir.path(), &world.spec, "[curation]\nmax_iterations = 5\n");
    let out = dir.path().join("out");
    let run = idc(&[
        "--config",
        arg(&config),
        "curate",
        "-i",
        arg(&input),
        "-o",
        arg(&out),
        "--iterations",
        "2",
    ]);
    assert_eq!(code(&run), 0);
    assert_eq!(read_json(&out.join("report.json"))["generation_rounds"], 8);
}

#[test]
fn replay_cache_reproduces_a_curation_run() {
    let dir = tempfile::tempdir().unwrap();
    let world = trap_world(10, 4, 6);
    let input = dir.path().join("items.jsonl");
    write_items(&input, &world.items);
    let cache = dir.path().join("cache.jsonl");
    let live = synthetic_config(dir.path(), &world.spec, "");
    let first = dir.path().join("live");
    let run = idc(&[
        "--config",
        arg(&live),
        "curate",
        "-i",
        arg(&input),
        "-o",
        arg(&first),
        "--cache",
        arg(&cache),
    ]);
    assert_eq!(code(&run), 0);

    let replay_config = dir.path().join("replay.toml");
    std::fs::write(
        &replay_config,
        format!(
            "[backends.oracle]\nendpoint_url = \"replay:{}\"\nmodel_name = \"synthetic-oracle\"\n",
            cache.display()
        ),
    )
    .unwrap();
    let second = dir.path().join("replayed");
    let run = idc(&[
        "--config",
        arg(&replay_config),
        "curate",
        "-i",
        arg(&input),
        "-o",
        arg(&second),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    files_equal(&first, &second, &["curated.jsonl", "trace.jsonl", "report.json"]);
}

#[test]
fn variant_count_builds_two_option_items() {
    let dir = tempfile::tempdir().unwrap();
    let world = trap_world(20, 10, 7);
    let input = dir.path().join("items.jsonl");
    write_items(&input, &world.items);
    let out = dir.path().join("out");
    let run = idc(&["variant", "-i", arg(&input), "-o", arg(&out), "--count", "2"]);
    assert_eq!(code(&run), 0);
    let items = read_items(&out.join("variant.jsonl"));
    assert!(items.iter().all(|i| i.n_options() == 2));
    assert_eq!(
        read_json(&out.join("manifest.json"))["counts"]["by_option_count"]["2"],
        20
    );
}

#[test]
fn variant_select_strongest_writes_strength_report() {
    let dir = tempfile::tempdir().unwrap();
    let item = McqItem::new(
        "q",
        "Which one?",
        vec!["right".into(), "weak".into(), "strong".into()],
        Label::from_char('A').unwrap(),
    )
    .unwrap();
    let spec = SyntheticOracleSpec {
        weights: [(
            item.stem.clone(),
            [
                ("right".to_string(), 1.0),
                ("weak".to_string(), 0.1),
                ("strong".to_string(), 3.0),
            ]
            .into(),
        )]
        .into(),
        ..Default::default()
    };
    let input = dir.path().join("items.jsonl");
    write_items(&input, &[item]);
    let config = synthetic_config(dir.path(), &spec, "");
    let out = dir.path().join("out");
    let run = idc(&[
        "--config",
        arg(&config),
        "variant",
        "-i",
        arg(&input),
        "-o",
        arg(&out),
        "--select",
        "strongest",
        "--k",
        "64",
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let v = read_items(&out.join("variant.jsonl"));
    assert_eq!(v[0].n_options(), 2);
    assert!(v[0].options.contains(&"strong".to_string()));
    let rows = std::fs::read_to_string(out.join("strengths.jsonl")).unwrap();
    let row: serde_json::Value = serde_json::from_str(rows.lines().next().unwrap()).unwrap();
    assert_eq!(row["selected"], "strong");
    assert_eq!(row["k"], 64);
}

#[test]
fn expand_restores_ten_options() {
    let dir = tempfile::tempdir().unwrap();
    let world = trap_world(5, 2, 8);
    let input = dir.path().join("items.jsonl");
    write_items(&input, &world.items);
    let config = synthetic_config(dir.path(), &world.spec, "");
    let out = dir.path().join("out");
    let run = idc(&[
        "--config",
        arg(&config),
        "expand",
        "-i",
        arg(&input),
        "-o",
        arg(&out),
        "--target",
        "10",
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let items = read_items(&out.join("expanded.jsonl"));
    assert_eq!(items.len(), 5);
    for (before, after) in world.items.iter().zip(&items) {
        assert_eq!(after.n_options(), 10);
        assert_eq!(after.correct_text(), before.correct_text());
    }
}

#[test]
fn convert_direct_and_single_round() {
    let dir = tempfile::tempdir().unwrap();
    let world = trap_world(6, 4, 9);
    let input = dir.path().join("items.jsonl");
    write_items(&input, &world.items);
    let config = synthetic_config(dir.path(), &world.spec, "");

    let out = dir.path().join("direct");
    let run = idc(&["convert", "-i", arg(&input), "-o", arg(&out), "--mode", "direct"]);
    assert_eq!(code(&run), 0);
    let rows = std::fs::read_to_string(out.join("converted.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(rows.lines().next().unwrap()).unwrap();
    assert_eq!(first["answer"], world.items[0].correct_text());
    assert_eq!(rows.lines().count(), 6);

    let out = dir.path().join("single");
    let run = idc(&[
        "--config",
        arg(&config),
        "convert",
        "-i",
        arg(&input),
        "-o",
        arg(&out),
        "--mode",
        "single-round",
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let items = read_items(&out.join("rewritten.jsonl"));
    assert_eq!(items.len(), 6);
    assert!(items
        .iter()
        .zip(&world.items)
        .all(|(a, b)| a.correct_text() == b.correct_text()));
}

#[test]
fn analyze_gap_peaks_at_zero_on_the_llama_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("llama.csv");
    std::fs::write(
        &table,
        "train,2,4,6,8,10\n\
         2,80.27,67.82,60.50,54.28,52.44\n\
         4,79.95,69.96,63.79,57.40,56.19\n\
         6,79.57,69.58,64.07,59.21,57.87\n\
         8,76.76,69.65,63.93,60.92,58.17\n\
         10,76.98,69.79,63.32,60.19,58.61\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let run = idc(&["analyze-gap", "-i", arg(&table), "-o", arg(&out)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let summary = read_json(&out.join("gap_summary.json"));
    assert_eq!(summary["peak_gap"], 0);
    assert!((summary["column_means"][0].as_f64().unwrap() - 78.71).abs() < 0.01);
    let gap = std::fs::read_to_string(out.join("gap_curve.csv")).unwrap();
    assert_eq!(gap.lines().next().unwrap(), "delta,mean_z,cells");
    assert_eq!(gap.lines().count(), 1 + 9);
}

#[test]
fn analyze_labels_permutes_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let world = trap_world(200, 4, 10);
    let input = dir.path().join("items.jsonl");
    write_items(&input, &world.items);
    let config = synthetic_config(dir.path(), &world.spec, "[seeds]\nshuffle = 4\n");
    let out = dir.path().join("out");
    let run = idc(&[
        "--config",
        arg(&config),
        "analyze-labels",
        "-i",
        arg(&input),
        "-o",
        arg(&out),
        "--permute",
        "--k",
        "2",
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let labels = read_json(&out.join("labels.json"));
    assert_eq!(labels["permuted_correct_labels"]["total"], 200);
    assert_eq!(
        labels["model_labels"]["total"].as_u64().unwrap() + labels["model_labels"]["parse_failures"].as_u64().unwrap(),
        400
    );
    let permuted = read_items(&out.join("permuted.jsonl"));
    assert!(permuted
        .iter()
        .zip(&world.items)
        .all(|(a, b)| a.correct_text() == b.correct_text()));
}

#[test]
fn simulate_reports_higher_spurious_rate_with_fewer_options() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let run = idc(&[
        "simulate",
        "--n",
        "2",
        "--n",
        "10",
        "--lambda",
        "0.8",
        "--s",
        "0.1",
        "-o",
        arg(&out),
    ]);
    assert_eq!(code(&run), 0);
    let rows = read_json(&out.join("simulation.json"));
    let rate = |i: usize| rows[i]["simulated_spurious"].as_f64().unwrap();
    assert_eq!(rows[0]["params"]["n"], 2);
    assert!(rate(0) > rate(1));
    for i in 0..2 {
        let diff = (rate(i) - rows[i]["closed_form_spurious"].as_f64().unwrap()).abs();
        assert!(diff <= rows[i]["spurious_tolerance"].as_f64().unwrap());
    }
}

#[test]
fn bad_simulation_parameters_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let run = idc(&["simulate", "--lambda", "1.5", "-o", arg(&out)]);
    assert_eq!(code(&run), 2);
    assert_eq!(read_json(&out.join("manifest.json"))["status"], "error");
}
