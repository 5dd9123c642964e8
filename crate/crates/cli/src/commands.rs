use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use idc_core::analysis::{
    closed_form_rewards, correct_label_histogram, gap_curve, gap_peak, label_distribution, normalize_scores,
    simulate_rewards, CrossEvalTable, RewardMixtureParams,
};
use idc_core::backend::RewriteDecision;
use idc_core::conversion::{convert_dataset, single_round_rewrite, ConversionMode};
use idc_core::dataset::{
    dedupe, filter_option_count, ingest_jsonl, make_variants, permute_correct_label, read_jsonl, split, write_jsonl,
    McqItem, SchemaMapping, VariantSpec,
};
use idc_core::idc::{audit, curate_dataset, ItemFailure};
use idc_core::seed;
use idc_core::strength::{estimate_dataset, select_distractor, SelectionMode, StrengthProfile};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BackendFactory, Role, RunConfig};
use crate::failure::{CliError, CliResult, Status};
use crate::manifest::Manifest;
use crate::{
    ConvertArgs, ConvertMode, CurateArgs, ExpandArgs, IngestArgs, LabelArgs, SelectArg, SimulateArgs, VariantArgs,
};

/// Resolves and fingerprints the input file before anything is written.
fn open_input<'a>(config: &'a RunConfig, manifest: &mut Manifest) -> CliResult<&'a Path> {
    let input = config.input()?;
    if !input.is_file() {
        return Err(CliError::config(format!("input {} does not exist", input.display())));
    }
    manifest
        .input(input)
        .map_err(|e| CliError::config(format!("cannot read input {}: {e}", input.display())))?;
    Ok(input)
}

fn load_items(config: &RunConfig, manifest: &mut Manifest) -> CliResult<Vec<McqItem>> {
    let input = open_input(config, manifest)?;
    let items: Vec<McqItem> = read_jsonl(input)?;
    for item in &items {
        item.validate()?;
    }
    manifest.count("input_items", items.len());
    Ok(items)
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::runtime(format!("cannot write {}: {e}", path.display()))
}

struct Outputs<'a> {
    dir: &'a Path,
    reports: &'a Path,
}

impl<'a> Outputs<'a> {
    fn new(config: &'a RunConfig) -> CliResult<Self> {
        Ok(Outputs {
            dir: config.output()?,
            reports: config.reports()?,
        })
    }

    fn prepare(&self) -> CliResult<()> {
        for dir in [self.dir, self.reports] {
            std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        Ok(())
    }

    fn jsonl<T: Serialize>(&self, manifest: &mut Manifest, name: &str, rows: &[T]) -> CliResult<PathBuf> {
        self.jsonl_in(self.dir, manifest, name, rows)
    }

    fn report_jsonl<T: Serialize>(&self, manifest: &mut Manifest, name: &str, rows: &[T]) -> CliResult<PathBuf> {
        self.jsonl_in(self.reports, manifest, name, rows)
    }

    fn jsonl_in<T: Serialize>(
        &self,
        dir: &Path,
        manifest: &mut Manifest,
        name: &str,
        rows: &[T],
    ) -> CliResult<PathBuf> {
        let path = dir.join(name);
        write_jsonl(rows, &path)?;
        manifest.output(self.dir, &path).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }

    fn json<T: Serialize>(&self, manifest: &mut Manifest, name: &str, value: &T) -> CliResult<PathBuf> {
        let path = self.reports.join(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| io_error(&path, e))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        manifest.output(self.dir, &path).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }

    fn csv(&self, manifest: &mut Manifest, name: &str, rows: &[Vec<String>]) -> CliResult<PathBuf> {
        let path = self.reports.join(name);
        let mut writer = csv::Writer::from_path(&path).map_err(|e| io_error(&path, e))?;
        for row in rows {
            writer.write_record(row).map_err(|e| io_error(&path, e))?;
        }
        writer.flush().map_err(|e| io_error(&path, e))?;
        manifest.output(self.dir, &path).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }
}

fn status_for(failures: usize) -> Status {
    if failures == 0 {
        Status::Success
    } else {
        Status::Partial
    }
}

pub fn ingest(config: &RunConfig, manifest: &mut Manifest, args: &IngestArgs) -> CliResult<Status> {
    let schema = match &args.schema_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read schema {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("invalid schema {}: {e}", path.display())))?
        }
        None => SchemaMapping::preset(&args.schema)
            .ok_or_else(|| CliError::config(format!("unknown schema preset {:?}", args.schema)))?,
    };
    if let Some(r) = args.split_ratio {
        if !(r > 0.0 && r < 1.0) {
            return Err(CliError::config(format!("--split-ratio must be in (0, 1), got {r}")));
        }
    }
    let input = open_input(config, manifest)?;
    let out = Outputs::new(config)?;
    manifest.param("schema", &schema);
    manifest.param("options", args.options);
    manifest.param("split_ratio", args.split_ratio);
    manifest.param("dedupe", !args.no_dedupe);

    let report = ingest_jsonl(input, &schema)?;
    manifest.count("lines_read", report.lines_read);
    manifest.count("parsed", report.items.len());
    manifest.count("parse_errors", report.errors.len());

    let mut items = report.items;
    if !args.no_dedupe {
        let before = items.len();
        items = dedupe(items);
        manifest.count("duplicates_removed", before - items.len());
    }
    if let Some(n) = args.options {
        let before = items.len();
        items = filter_option_count(items, n);
        manifest.count("option_count_removed", before - items.len());
    }
    manifest.count("kept", items.len());

    out.prepare()?;
    match args.split_ratio {
        Some(ratio) => {
            let s = split(items, ratio, config.seeds.split)?;
            manifest.count("train", s.train.len());
            manifest.count("test", s.test.len());
            out.jsonl(manifest, "train.jsonl", &s.train)?;
            out.jsonl(manifest, "test.jsonl", &s.test)?;
        }
        None => {
            out.jsonl(manifest, "items.jsonl", &items)?;
        }
    }
    if !report.errors.is_empty() {
        out.report_jsonl(manifest, "ingest_errors.jsonl", &report.errors)?;
    }
    Ok(status_for(report.errors.len()))
}

#[derive(Serialize)]
struct StrengthRow {
    #[serde(flatten)]
    report: idc_core::strength::StrengthReport,
    selected: Option<String>,
}

pub fn variant(config: &RunConfig, manifest: &mut Manifest, args: &VariantArgs) -> CliResult<Status> {
    let variant_seed = config.seeds.variant;
    if let Some(mode) = args.select {
        config.check_roles(&[Role::Evaluator])?;
        let k = args.k.unwrap_or(config.curation.k_samples);
        if k == 0 {
            return Err(CliError::config("--k must be at least 1"));
        }
        let items = load_items(config, manifest)?;
        let evaluator = BackendFactory::new(config)?.backend(Role::Evaluator)?;
        let out = Outputs::new(config)?;
        let mode = match mode {
            SelectArg::Random => SelectionMode::Random,
            SelectArg::Strongest => SelectionMode::Strongest,
            SelectArg::Weakest => SelectionMode::Weakest,
        };
        manifest.param("select", format!("{mode:?}").to_lowercase());
        manifest.param("k", k);

        let profiles = estimate_dataset(&items, &evaluator, k, config.seeds.global);
        let mut variants = Vec::new();
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        let mut solved: Vec<StrengthProfile> = Vec::new();
        for (item, profile) in items.iter().zip(profiles) {
            let result = profile.and_then(|p| {
                let v = select_distractor(item, &p, mode, variant_seed)?;
                Ok((p, v))
            });
            match result {
                Ok((p, v)) => {
                    let kept = v.distractors().next().map(|(_, t)| t.to_string());
                    rows.push(StrengthRow {
                        report: p.report(),
                        selected: kept,
                    });
                    solved.push(p);
                    variants.push(v);
                }
                Err(e) => failures.push(ItemFailure {
                    id: item.id.clone(),
                    error: e.to_string(),
                }),
            }
        }
        out.prepare()?;
        out.jsonl(manifest, "variant.jsonl", &variants)?;
        out.report_jsonl(manifest, "strengths.jsonl", &rows)?;
        if !failures.is_empty() {
            out.report_jsonl(manifest, "failures.jsonl", &failures)?;
        }
        if let Ok(ratio) = idc_core::strength::solve_all_ratio(&solved) {
            manifest.count("solve_all_ratio", ratio);
        }
        manifest.count("written", variants.len());
        manifest.count("failed", failures.len());
        return Ok(status_for(failures.len()));
    }

    let spec = match (args.count, args.mix.is_empty()) {
        (Some(n), true) => VariantSpec::fixed(n, variant_seed),
        (None, false) => VariantSpec::mixed_equal(&args.mix, variant_seed),
        _ => {
            return Err(CliError::config(
                "variant needs exactly one of --count, --mix or --select",
            ))
        }
    };
    spec.validate()?;
    let items = load_items(config, manifest)?;
    let out = Outputs::new(config)?;
    manifest.param("spec", &spec);
    let variants = make_variants(&items, &spec)?;
    out.prepare()?;
    out.jsonl(manifest, "variant.jsonl", &variants)?;
    let mut by_count: BTreeMap<usize, usize> = BTreeMap::new();
    for v in &variants {
        *by_count.entry(v.n_options()).or_default() += 1;
    }
    manifest.count("written", variants.len());
    manifest.count("by_option_count", by_count);
    Ok(Status::Success)
}

pub fn expand(config: &RunConfig, manifest: &mut Manifest, args: &ExpandArgs) -> CliResult<Status> {
    config.check_roles(&[Role::Generator])?;
    let items = load_items(config, manifest)?;
    let generator = BackendFactory::new(config)?.backend(Role::Generator)?;
    let out = Outputs::new(config)?;
    manifest.param("target", args.target);

    let results: Vec<_> = items
        .par_iter()
        .map(|item| {
            generator.expand_options(
                item,
                args.target,
                seed::derive(config.seeds.global, &["expand", &item.id]),
            )
        })
        .collect();
    let mut expanded = Vec::new();
    let mut failures = Vec::new();
    for (item, result) in items.iter().zip(results) {
        match result {
            Ok(e) => expanded.push(e),
            Err(e) => failures.push(ItemFailure {
                id: item.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    out.prepare()?;
    out.jsonl(manifest, "expanded.jsonl", &expanded)?;
    if !failures.is_empty() {
        out.report_jsonl(manifest, "failures.jsonl", &failures)?;
    }
    manifest.count("written", expanded.len());
    manifest.count("failed", failures.len());
    Ok(status_for(failures.len()))
}

pub fn curate(config: &RunConfig, manifest: &mut Manifest, args: &CurateArgs) -> CliResult<Status> {
    config.check_roles(&[Role::Generator, Role::Evaluator, Role::Judge])?;
    let items = load_items(config, manifest)?;
    let backends = BackendFactory::new(config)?.curation()?;
    let out = Outputs::new(config)?;
    manifest.param("curation", &config.curation);

    let run = curate_dataset(&items, &backends, &config.curation, config.seeds.global)?;
    let curated: Vec<&McqItem> = run.outcomes.iter().map(|o| &o.final_item).collect();
    let trace: Vec<_> = run.outcomes.iter().flat_map(|o| &o.log).collect();

    out.prepare()?;
    out.jsonl(manifest, "curated.jsonl", &curated)?;
    out.report_jsonl(manifest, "trace.jsonl", &trace)?;
    out.json(manifest, "report.json", &run.report)?;
    if args.audit {
        let findings = audit(&run.outcomes, &backends.judge)?;
        manifest.count("audit_findings", findings.len());
        out.report_jsonl(manifest, "audit.jsonl", &findings)?;
    }
    let r = &run.report;
    manifest.count("curated", r.curated);
    manifest.count("failed", r.failed);
    manifest.count("generation_rounds", r.generation_rounds);
    manifest.count("equivalence_rejections", r.equivalence_rejections);
    Ok(status_for(r.failed))
}

pub fn convert(config: &RunConfig, manifest: &mut Manifest, args: &ConvertArgs) -> CliResult<Status> {
    let role = match args.mode {
        ConvertMode::Direct => None,
        ConvertMode::Filter => Some(Role::Judge),
        ConvertMode::Rewrite | ConvertMode::SingleRound => Some(Role::Generator),
    };
    if let Some(role) = role {
        config.check_roles(&[role])?;
    }
    let items = load_items(config, manifest)?;
    let backend = match role {
        Some(role) => Some(BackendFactory::new(config)?.backend(role)?),
        None => None,
    };
    let out = Outputs::new(config)?;
    manifest.param("mode", format!("{:?}", args.mode).to_lowercase());

    if let ConvertMode::SingleRound = args.mode {
        let backend = backend.expect("generator resolved");
        let results: Vec<_> = items
            .par_iter()
            .map(|item| {
                single_round_rewrite(
                    item,
                    &backend,
                    seed::derive(config.seeds.global, &["single-round", &item.id]),
                )
            })
            .collect();
        let mut rewritten = Vec::new();
        let mut failures = Vec::new();
        let mut improved = 0usize;
        for (item, result) in items.iter().zip(results) {
            match result {
                Ok((new_item, decision)) => {
                    if decision == RewriteDecision::Improve {
                        improved += 1;
                    }
                    rewritten.push(new_item);
                }
                Err(e) => failures.push(ItemFailure {
                    id: item.id.clone(),
                    error: e.to_string(),
                }),
            }
        }
        out.prepare()?;
        out.jsonl(manifest, "rewritten.jsonl", &rewritten)?;
        if !failures.is_empty() {
            out.report_jsonl(manifest, "failures.jsonl", &failures)?;
        }
        manifest.count("written", rewritten.len());
        manifest.count("improved", improved);
        manifest.count("kept_all", rewritten.len() - improved);
        manifest.count("failed", failures.len());
        return Ok(status_for(failures.len()));
    }

    let mode = match args.mode {
        ConvertMode::Direct => ConversionMode::Direct,
        ConvertMode::Filter => ConversionMode::Filter,
        _ => ConversionMode::Rewrite,
    };
    let run = convert_dataset(&items, mode, backend.as_ref(), config.seeds.global)?;
    out.prepare()?;
    out.jsonl(manifest, "converted.jsonl", &run.items)?;
    if !run.failures.is_empty() {
        out.report_jsonl(manifest, "failures.jsonl", &run.failures)?;
    }
    if !run.dropped.is_empty() {
        out.report_jsonl(manifest, "dropped.jsonl", &run.dropped)?;
    }
    manifest.count("written", run.items.len());
    manifest.count("dropped", run.dropped.len());
    manifest.count("failed", run.failures.len());
    Ok(status_for(run.failures.len()))
}

/// Reads a cross-evaluation table: header `train,<n1>,<n2>,..`, then one
/// row per training option count with accuracies per test option count.
fn read_table(path: &Path) -> CliResult<CrossEvalTable> {
    let bad = |msg: String| CliError::config(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let test_counts = headers
        .iter()
        .skip(1)
        .map(|h| {
            h.trim()
                .parse::<usize>()
                .map_err(|_| bad(format!("bad test count {h:?}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut train_counts = Vec::new();
    let mut accuracies = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let mut cells = record.iter();
        let m = cells.next().unwrap_or_default();
        train_counts.push(
            m.trim()
                .parse::<usize>()
                .map_err(|_| bad(format!("bad train count {m:?}")))?,
        );
        accuracies.push(
            cells
                .map(|c| c.trim().parse::<f64>().map_err(|_| bad(format!("bad accuracy {c:?}"))))
                .collect::<CliResult<Vec<_>>>()?,
        );
    }
    CrossEvalTable::new(train_counts, test_counts, accuracies).map_err(|e| bad(e.to_string()))
}

#[derive(Serialize)]
struct GapSummary {
    train_counts: Vec<usize>,
    test_counts: Vec<usize>,
    column_means: Vec<f64>,
    column_sds: Vec<f64>,
    flagged_columns: Vec<usize>,
    peak_gap: Option<i64>,
}

pub fn analyze_gap(config: &RunConfig, manifest: &mut Manifest) -> CliResult<Status> {
    let input = open_input(config, manifest)?;
    let table = read_table(input)?;
    let out = Outputs::new(config)?;
    let z = normalize_scores(&table)?;
    let curve = gap_curve(&z);
    let peak = gap_peak(&curve);

    let mut z_rows = vec![std::iter::once("train".to_string())
        .chain(z.test_counts.iter().map(|n| n.to_string()))
        .collect::<Vec<_>>()];
    for (m, row) in z.train_counts.iter().zip(&z.z) {
        z_rows.push(
            std::iter::once(m.to_string())
                .chain(row.iter().map(|v| format!("{v:.6}")))
                .collect(),
        );
    }
    let mut gap_rows = vec![vec!["delta".to_string(), "mean_z".into(), "cells".into()]];
    for (delta, point) in &curve {
        gap_rows.push(vec![
            delta.to_string(),
            format!("{:.6}", point.mean_z),
            point.cells.to_string(),
        ]);
    }
    out.prepare()?;
    out.csv(manifest, "z_scores.csv", &z_rows)?;
    out.csv(manifest, "gap_curve.csv", &gap_rows)?;
    out.json(
        manifest,
        "gap_summary.json",
        &GapSummary {
            train_counts: z.train_counts.clone(),
            test_counts: z.test_counts.clone(),
            column_means: z.column_means.clone(),
            column_sds: z.column_sds.clone(),
            flagged_columns: z.flagged_columns.clone(),
            peak_gap: peak,
        },
    )?;
    manifest.count("cells", z.train_counts.len() * z.test_counts.len());
    manifest.count("peak_gap", peak);
    Ok(Status::Success)
}

pub fn analyze_labels(config: &RunConfig, manifest: &mut Manifest, args: &LabelArgs) -> CliResult<Status> {
    if args.k > 0 {
        config.check_roles(&[Role::Evaluator])?;
    }
    let mut items = load_items(config, manifest)?;
    let evaluator = match args.k {
        0 => None,
        _ => Some(BackendFactory::new(config)?.backend(Role::Evaluator)?),
    };
    let out = Outputs::new(config)?;
    manifest.param("permute", args.permute);
    manifest.param("k", args.k);

    let mut report = BTreeMap::new();
    report.insert("input_correct_labels", correct_label_histogram(&items, "input"));
    out.prepare()?;
    if args.permute {
        items = permute_correct_label(&items, config.seeds.shuffle)?;
        report.insert("permuted_correct_labels", correct_label_histogram(&items, "permuted"));
        out.jsonl(manifest, "permuted.jsonl", &items)?;
    }
    if let Some(backend) = &evaluator {
        let hist = label_distribution(&items, backend, args.k, config.seeds.global, "model")?;
        manifest.count("model_samples", hist.total + hist.parse_failures);
        manifest.count("model_parse_failures", hist.parse_failures);
        report.insert("model_labels", hist);
    }
    out.json(manifest, "labels.json", &report)?;
    Ok(Status::Success)
}

#[derive(Serialize)]
struct SimulationRow {
    params: RewardMixtureParams,
    closed_form_reward: f64,
    closed_form_spurious: f64,
    simulated_reward: f64,
    simulated_spurious: f64,
    spurious_tolerance: f64,
}

pub fn simulate(config: &RunConfig, manifest: &mut Manifest, args: &SimulateArgs) -> CliResult<Status> {
    if args.trials == 0 {
        return Err(CliError::config("--trials must be at least 1"));
    }
    let params: Vec<RewardMixtureParams> = args
        .n
        .iter()
        .map(|&n| RewardMixtureParams {
            n,
            lambda: args.lambda,
            s: args.s,
            p_correct_reasoning: args.pcr,
            p_slip: args.slip,
        })
        .collect();
    for p in &params {
        p.validate()?;
    }
    let out = Outputs::new(config)?;
    manifest.param("trials", args.trials);
    let mut rows = Vec::new();
    for p in params {
        let exact = closed_form_rewards(&p);
        let sim = simulate_rewards(&p, args.trials, config.seeds.global)?;
        rows.push(SimulationRow {
            params: p,
            closed_form_reward: exact.p_reward,
            closed_form_spurious: exact.p_spurious,
            simulated_reward: sim.p_reward,
            simulated_spurious: sim.p_spurious,
            spurious_tolerance: idc_core::analysis::binomial_tolerance(exact.p_spurious, args.trials, 4.0),
        });
    }
    out.prepare()?;
    out.json(manifest, "simulation.json", &rows)?;
    manifest.count("cells", rows.len());
    Ok(Status::Success)
}
