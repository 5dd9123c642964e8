//! `idc`: dataset preparation, distractor curation and analysis runs.
//!
//! Every subcommand reads the optional TOML run configuration, applies flag
//! overrides, writes its artifacts plus `manifest.json` into the output
//! directory, and exits with 0 (success), 1 (partial per-item failures) or
//! 2 (configuration or environment error).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod failure;
mod manifest;

use config::RunConfig;
use failure::{CliError, CliResult};
use manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "idc", version, about = "Multiple-choice distractor curation pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Input file (overrides paths.input).
    #[arg(long, short, global = true)]
    input: Option<PathBuf>,
    /// Output directory (overrides paths.output).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Directory for reports and traces (overrides paths.reports).
    #[arg(long, global = true)]
    reports: Option<PathBuf>,
    /// Replay cache file (overrides paths.cache).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Global seed (overrides seeds.global).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads and in-flight request limit (overrides concurrency).
    #[arg(long, global = true)]
    concurrency: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read a JSONL export, dedupe, filter by option count, split.
    Ingest(IngestArgs),
    /// Build reduced-option variants.
    Variant(VariantArgs),
    /// Add generated options until each item reaches a target count.
    Expand(ExpandArgs),
    /// Run iterative distractor curation.
    Curate(CurateArgs),
    /// Convert multiple-choice items to short-answer items, or rewrite
    /// distractors in a single round.
    Convert(ConvertArgs),
    /// z-normalize a cross-evaluation accuracy table and build the gap curve.
    AnalyzeGap,
    /// Correct-label and model-pick label histograms.
    AnalyzeLabels(LabelArgs),
    /// Spurious-reward mixture model: closed form and Monte Carlo.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Field-name preset: canonical, mmlu-pro or medqa.
    #[arg(long, default_value = "canonical")]
    schema: String,
    /// JSON schema mapping file; replaces --schema.
    #[arg(long)]
    schema_file: Option<PathBuf>,
    /// Keep only items with exactly this many options.
    #[arg(long)]
    options: Option<usize>,
    /// Train fraction; writes train.jsonl and test.jsonl.
    #[arg(long)]
    split_ratio: Option<f64>,
    /// Skip duplicate removal.
    #[arg(long)]
    no_dedupe: bool,
}

#[derive(Debug, Args)]
struct VariantArgs {
    /// Fixed option count for every item.
    #[arg(long, conflicts_with_all = ["mix", "select"])]
    count: Option<usize>,
    /// Equal-share mix of option counts, e.g. 2,4,6,8,10.
    #[arg(long, value_delimiter = ',', conflicts_with = "select")]
    mix: Vec<usize>,
    /// Two-option variant keeping the distractor chosen by model strength.
    #[arg(long, value_enum)]
    select: Option<SelectArg>,
    /// Samples per item when estimating strength (default: curation.k_samples).
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SelectArg {
    Random,
    Strongest,
    Weakest,
}

#[derive(Debug, Args)]
struct ExpandArgs {
    /// Option count after expansion.
    #[arg(long)]
    target: usize,
}

#[derive(Debug, Args)]
struct CurateArgs {
    /// Iteration budget T (overrides curation.max_iterations).
    #[arg(long)]
    iterations: Option<usize>,
    /// Samples per evaluation K (overrides curation.k_samples).
    #[arg(long)]
    k: Option<usize>,
    /// Final option count (overrides curation.target_option_count).
    #[arg(long)]
    target: Option<usize>,
    /// Skip the equivalence judge (exact matches are still rejected).
    #[arg(long)]
    no_guard: bool,
    /// Stop after this many failed replacements in a row.
    #[arg(long)]
    early_stop: Option<usize>,
    /// Re-judge every final distractor and write audit.jsonl.
    #[arg(long)]
    audit: bool,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    #[arg(long, value_enum, default_value = "direct")]
    mode: ConvertMode,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ConvertMode {
    Direct,
    Filter,
    Rewrite,
    SingleRound,
}

#[derive(Debug, Args)]
struct LabelArgs {
    /// Move each correct answer to a uniformly drawn label first (seeds.shuffle).
    #[arg(long)]
    permute: bool,
    /// Model samples per item; 0 skips model sampling.
    #[arg(long, default_value_t = 0)]
    k: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Option counts; repeat or comma-separate.
    #[arg(long = "n", value_delimiter = ',', default_values_t = [2usize, 4, 6, 8, 10])]
    n: Vec<usize>,
    /// Share of invalid-reasoning answers that are uniform guesses.
    #[arg(long, default_value_t = 0.8)]
    lambda: f64,
    /// Systematic preference for the correct option under invalid reasoning.
    #[arg(long, default_value_t = 0.1)]
    s: f64,
    /// Probability of valid reasoning.
    #[arg(long, default_value_t = 0.5)]
    pcr: f64,
    /// Probability of a wrong answer despite valid reasoning.
    #[arg(long, default_value_t = 0.0)]
    slip: f64,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Variant(_) => "variant",
            Command::Expand(_) => "expand",
            Command::Curate(_) => "curate",
            Command::Convert(_) => "convert",
            Command::AnalyzeGap => "analyze-gap",
            Command::AnalyzeLabels(_) => "analyze-labels",
            Command::Simulate(_) => "simulate",
        }
    }
}

fn effective_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut config = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let g = &cli.global;
    let paths = &mut config.paths;
    for (slot, flag) in [
        (&mut paths.input, &g.input),
        (&mut paths.output, &g.output),
        (&mut paths.reports, &g.reports),
        (&mut paths.cache, &g.cache),
    ] {
        if let Some(value) = flag {
            *slot = Some(value.clone());
        }
    }
    if let Some(seed) = g.seed {
        config.seeds.global = seed;
    }
    if g.concurrency.is_some() {
        config.concurrency = g.concurrency;
    }
    if let Command::Curate(args) = &cli.command {
        let c = &mut config.curation;
        if let Some(t) = args.iterations {
            c.max_iterations = t;
        }
        if let Some(k) = args.k {
            c.k_samples = k;
        }
        if args.target.is_some() {
            c.target_option_count = args.target;
        }
        if args.no_guard {
            c.equivalence_guard = false;
        }
        if args.early_stop.is_some() {
            c.early_stop_after = args.early_stop;
        }
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: &Cli, config: &RunConfig, manifest: &mut Manifest) -> CliResult<failure::Status> {
    if let Some(threads) = config.concurrency {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot size thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Ingest(a) => commands::ingest(config, manifest, a),
        Command::Variant(a) => commands::variant(config, manifest, a),
        Command::Expand(a) => commands::expand(config, manifest, a),
        Command::Curate(a) => commands::curate(config, manifest, a),
        Command::Convert(a) => commands::convert(config, manifest, a),
        Command::AnalyzeGap => commands::analyze_gap(config, manifest),
        Command::AnalyzeLabels(a) => commands::analyze_labels(config, manifest, a),
        Command::Simulate(a) => commands::simulate(config, manifest, a),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();

    let cli = Cli::parse();
    let command = cli.command.name();
    let config = effective_config(&cli);
    let (hash, seeds, manifest_dir) = match &config {
        Ok(c) => (c.hash(), c.seeds, c.paths.output.clone()),
        Err(_) => (String::new(), Default::default(), cli.global.output.clone()),
    };
    let mut manifest = Manifest::new(command, hash, seeds);

    let result = config.and_then(|c| execute(&cli, &c, &mut manifest));
    tracing::info!(command, ok = result.is_ok(), "command finished");
    let code = match &result {
        Ok(status) => {
            manifest.status = status.as_str().into();
            status.exit_code()
        }
        Err(e) => {
            manifest.status = "error".into();
            manifest.error = Some(e.to_string());
            let report = serde_json::json!({"command": command, "status": "error", "error": e.to_string()});
            eprintln!("{report}");
            e.exit_code()
        }
    };
    if let Some(dir) = manifest_dir {
        if let Err(e) = manifest.write(&dir) {
            eprintln!("cannot write manifest to {}: {e}", dir.display());
            return ExitCode::from(2);
        }
    }
    ExitCode::from(code as u8)
}
