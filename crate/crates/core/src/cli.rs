//! Subcommands of the `eclm` binary.
//!
//! Exit codes: 0 on success, 2 for input errors, 3 when the endpoint cannot
//! be reached.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::corpus::{self, Example, LabelInventory, Strictness};
use crate::entity_codec::{self, AlignmentPolicy};
use crate::inference::{self, Corruption, GenerationCache, GenerationRecord, InferenceConfig, InferenceError, Source};
use crate::intent_chain::{Connectives, DEFAULT_CONNECTIVES};
use crate::pipeline;
use crate::prompting::{self, PromptVariant};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ENDPOINT: i32 = 3;

pub const REPORT_TABLE: &str = "report.txt";
pub const REPORT_KV: &str = "report.kv";
pub const DIAGNOSTICS: &str = "diagnostics.jsonl";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "eclm", version, about = "Entity-slot / chain-of-intent multi-intent SLU pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dataset statistics.
    Stats(StatsArgs),
    /// Emit a JSONL training file.
    Build(BuildArgs),
    /// Obtain generations, parse, recover and score them.
    Eval(EvalArgs),
    /// Measure how well recover(construct(x)) reproduces the gold tags.
    Roundtrip(RoundtripArgs),
}

#[derive(Debug, Clone, Args)]
pub struct LoadArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Abort on the first malformed block (default).
    #[arg(long, conflicts_with = "lenient")]
    pub strict: bool,
    /// Skip malformed blocks and report them as warnings.
    #[arg(long)]
    pub lenient: bool,
    /// With --lenient, demote dangling I- tags to B- instead of skipping.
    #[arg(long, requires = "lenient")]
    pub repair: bool,
}

impl LoadArgs {
    fn strictness(&self) -> Strictness {
        if self.lenient {
            Strictness::Lenient { repair: self.repair }
        } else {
            Strictness::Strict
        }
    }
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub load: LoadArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Eclm,
    NoEntity,
    NoChain,
    Vanilla,
}

impl From<VariantArg> for PromptVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Eclm => PromptVariant::Eclm,
            VariantArg::NoEntity => PromptVariant::NoEntitySlot,
            VariantArg::NoChain => PromptVariant::NoChain,
            VariantArg::Vanilla => PromptVariant::VanillaSft,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, value_enum, default_value = "eclm")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 1.0)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated chain connectives.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CONNECTIVES.map(String::from))]
    pub connectives: Vec<String>,
    /// Corpus whose labels populate the prompt inventory (defaults to --dataset).
    #[arg(long)]
    pub inventory: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub load: LoadArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceArg {
    Endpoint,
    Cache,
    MockEcho,
    MockCorrupt,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub load: LoadArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value = "endpoint")]
    pub source: SourceArg,
    /// For mock-corrupt, e.g. drop_entity(1.0) or relabel_entity=0.5.
    #[arg(long, value_parser = parse_corruption)]
    pub corruption: Option<Corruption>,
    #[arg(long, default_value = "http://127.0.0.1:8000/v1")]
    pub endpoint: String,
    #[arg(long, default_value = "eclm")]
    pub model: String,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 512)]
    pub max_tokens: u32,
    #[arg(long, default_value_t = 4)]
    pub max_in_flight: usize,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
    /// Generation cache (defaults to <out>/cache.jsonl).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Output directory for the report, diagnostics and manifest.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_corruption(s: &str) -> Result<Corruption, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    #[command(flatten)]
    pub load: LoadArgs,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn load(args: &LoadArgs, err: &mut dyn Write) -> CliResult<Vec<Example>> {
    let loaded = corpus::load_corpus(&args.dataset, args.strictness()).map_err(CliError::input)?;
    if args.lenient {
        for w in &loaded.warnings {
            let _ = writeln!(err, "warning: {}: {w}", args.dataset.display());
        }
    }
    if loaded.examples.is_empty() {
        return Err(CliError::input(corpus::CorpusError::EmptyCorpus));
    }
    Ok(loaded.examples)
}

fn inventory_for(common: &CommonArgs, full: &[Example], err: &mut dyn Write) -> CliResult<LabelInventory> {
    match &common.inventory {
        Some(path) => {
            let args = LoadArgs {
                dataset: path.clone(),
                strict: false,
                lenient: true,
                repair: true,
            };
            Ok(LabelInventory::from_corpus(&load(&args, err)?))
        }
        None => Ok(LabelInventory::from_corpus(full)),
    }
}

fn connectives(common: &CommonArgs) -> CliResult<Connectives> {
    Connectives::new(&common.connectives).map_err(CliError::input)
}

pub fn cmd_stats(args: &StatsArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<corpus::CorpusStats> {
    let loaded = corpus::load_corpus(&args.load.dataset, args.load.strictness()).map_err(CliError::input)?;
    for w in &loaded.warnings {
        let _ = writeln!(err, "warning: {}: {w}", args.load.dataset.display());
    }
    let stats = corpus::compute_stats(&loaded.examples).map_err(CliError::input)?;
    let _ = write!(out, "{stats}");
    if args.load.lenient {
        let _ = writeln!(out, "warnings={}", loaded.warnings.len());
    }
    Ok(stats)
}

pub fn cmd_build(args: &BuildArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<prompting::BuildSummary> {
    let full = load(&args.load, err)?;
    let inventory = inventory_for(&args.common, &full, err)?;
    let connectives = connectives(&args.common)?;
    let subset = corpus::subsample(&full, args.common.ratio, args.common.seed).map_err(CliError::input)?;
    let summary = prompting::emit_training_file(
        &subset,
        args.common.variant.into(),
        &connectives,
        &inventory,
        &args.out,
    )
    .map_err(CliError::input)?;
    let _ = writeln!(out, "records={}", summary.records);
    let _ = writeln!(out, "fallback_chains={}", summary.fallback_chains);
    let _ = writeln!(out, "fallback_fraction={:.6}", summary.fallback_fraction());
    Ok(summary)
}

/// Everything needed to reproduce an evaluation run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub dataset: PathBuf,
    pub inventory: Option<PathBuf>,
    pub strictness: String,
    pub variant: PromptVariant,
    pub ratio: f64,
    pub seed: u64,
    pub connectives: Vec<String>,
    pub source: SourceArg,
    pub corruption: Option<String>,
    pub cache: Option<PathBuf>,
    pub config: InferenceConfig,
    pub n_examples: usize,
    pub live_generations: usize,
    pub cached_generations: usize,
    pub started_at: u64,
    pub finished_at: u64,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<crate::metrics::EvalReport> {
    let started_at = unix_now();
    let full = load(&args.load, err)?;
    let inventory = inventory_for(&args.common, &full, err)?;
    let connectives = connectives(&args.common)?;
    let variant: PromptVariant = args.common.variant.into();
    let corpus = if args.common.ratio < 1.0 {
        corpus::subsample(&full, args.common.ratio, args.common.seed).map_err(CliError::input)?
    } else {
        full
    };
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::input(format!("{}: {e}", args.out.display())))?;

    let config = InferenceConfig {
        endpoint_url: args.endpoint.clone(),
        model_name: args.model.clone(),
        temperature: args.temperature,
        max_output_tokens: args.max_tokens,
        max_in_flight: args.max_in_flight,
        timeout: Duration::from_secs(args.timeout_secs),
        retries: args.retries,
        ..InferenceConfig::default()
    };
    config.validate().map_err(CliError::input)?;
    let cache_path = args.cache.clone().unwrap_or_else(|| args.out.join("cache.jsonl"));
    let prompts: Vec<prompting::Prompt> = corpus
        .iter()
        .map(|ex| prompting::render_prompt(ex, variant, &inventory))
        .collect();

    let generations: Vec<GenerationRecord> = match args.source {
        SourceArg::MockEcho => inference::mock_echo(&corpus, variant, &connectives, &inventory),
        SourceArg::MockCorrupt => {
            let corruption = args
                .corruption
                .ok_or_else(|| CliError::input("--source mock-corrupt needs --corruption"))?;
            inference::mock_corrupt(&corpus, variant, &connectives, &inventory, corruption, args.common.seed)
        }
        SourceArg::Cache => {
            let cache = GenerationCache::open(&cache_path).map_err(CliError::input)?;
            inference::lookup_cached(&prompts, &config, &cache)
        }
        SourceArg::Endpoint => match inference::generate_batch(&prompts, &config, &cache_path) {
            Ok(records) => records,
            Err(e @ InferenceError::EndpointUnreachable { .. }) => {
                return Err(CliError {
                    code: EXIT_ENDPOINT,
                    message: e.to_string(),
                })
            }
            Err(e) => return Err(CliError::input(e)),
        },
    };

    let (report, outcomes) =
        pipeline::score_generations(&corpus, &generations, variant, Some(&inventory), AlignmentPolicy::Greedy)
            .map_err(CliError::input)?;

    let table = report.to_table();
    write_file(&args.out.join(REPORT_TABLE), table.as_bytes())?;
    write_file(&args.out.join(REPORT_KV), report.to_key_values().as_bytes())?;
    let mut diagnostics = Vec::new();
    for outcome in &outcomes {
        serde_json::to_writer(&mut diagnostics, outcome).map_err(CliError::input)?;
        diagnostics.push(b'\n');
    }
    write_file(&args.out.join(DIAGNOSTICS), &diagnostics)?;

    let uses_cache = matches!(args.source, SourceArg::Endpoint | SourceArg::Cache);
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        dataset: args.load.dataset.clone(),
        inventory: args.common.inventory.clone(),
        strictness: format!("{:?}", args.load.strictness()),
        variant,
        ratio: args.common.ratio,
        seed: args.common.seed,
        connectives: args.common.connectives.clone(),
        source: args.source,
        corruption: args.corruption.map(|c| c.to_string()),
        cache: uses_cache.then_some(cache_path),
        config,
        n_examples: corpus.len(),
        live_generations: generations.iter().filter(|g| g.source == Source::Live).count(),
        cached_generations: generations.iter().filter(|g| g.source == Source::Cache).count(),
        started_at,
        finished_at: unix_now(),
    };
    let manifest = serde_json::to_vec_pretty(&manifest).map_err(CliError::input)?;
    write_file(&args.out.join(MANIFEST), &manifest)?;

    let _ = write!(out, "{table}");
    Ok(report)
}

pub fn cmd_roundtrip(
    args: &RoundtripArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CliResult<entity_codec::RoundtripReport> {
    let corpus = load(&args.load, err)?;
    let report = entity_codec::roundtrip_report(&corpus, AlignmentPolicy::Greedy);
    let _ = write!(out, "{report}");
    Ok(report)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Stats(a) => cmd_stats(a, out, err).map(drop),
        Command::Build(a) => cmd_build(a, out, err).map(drop),
        Command::Eval(a) => cmd_eval(a, out, err).map(drop),
        Command::Roundtrip(a) => cmd_roundtrip(a, out, err).map(drop),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}
