use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vlgen_core::exec;
use vlgen_core::export::{export_file, ExportFormat};
use vlgen_core::filter::{
    run_filter, EmbeddingBackend, FilterConfig, FilterOutputs, HashEmbedder, RemoteEmbedder, ScoreMode,
    ScriptedEmbedder,
};
use vlgen_core::genharness::{run_generation, GenerationRun, RetryPolicy, RunOptions};
use vlgen_core::human_eval::{
    aggregate, ingest_session, render_side_by_side, sample_batch, Batch, EvalReport, EvalTag,
};
use vlgen_core::ingest::{build_manifest, build_recipe, ingest_source, SourceFormat, SourceSpec};
use vlgen_core::io::{read_json, write_json_pretty, write_jsonl};
use vlgen_core::parser::ParseOptions;
use vlgen_core::pipeline::{
    parse_generations, run_pipeline, EmbedderConfig, GeneratorConfig, PipelineConfig, PipelineError, PipelineOptions,
};
use vlgen_core::stats::{compare_datasets, compute_stats, write_report, LexiconTagger, StatsDocument};
use vlgen_core::templates::{load_pool, render_prompt, InstructionPool, PromptSpec};
use vlgen_core::{CorpusManifest, TaskType};

// Stdout writes that end the process quietly when the reader goes away.
macro_rules! out {
    ($($arg:tt)*) => { write_stdout(&format!($($arg)*)) };
}

macro_rules! outln {
    ($($arg:tt)*) => { write_stdout(&(format!($($arg)*) + "\n")) };
}

fn write_stdout(text: &str) {
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: writing to stdout: {e}");
        std::process::exit(2);
    }
}

const GENERATOR_ENDPOINT_ENV: &str = "VLGEN_GENERATOR_ENDPOINT";
const EMBEDDER_ENDPOINT_ENV: &str = "VLGEN_EMBEDDER_ENDPOINT";

/// Instruction-data pipeline for vision-language models.
#[derive(Parser)]
#[command(name = "vlgen", disable_version_flag = true, arg_required_else_help = true)]
struct Cli {
    /// Print version information as JSON and exit.
    #[arg(long, short = 'V')]
    version: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an annotated source into sample records.
    Ingest(IngestArgs),
    /// Index an image directory into a corpus manifest.
    Manifest(ManifestArgs),
    /// Print a named training mixture.
    Recipe(RecipeArgs),
    /// Render generation prompts.
    Render(RenderArgs),
    /// Run the generator over a manifest (resumable).
    Generate(GenerateArgs),
    /// Parse generation records into samples.
    Parse(ParseArgs),
    /// Score, deduplicate and filter region samples.
    Filter(FilterArgs),
    /// Corpus statistics with CSV and SVG charts.
    Stats(StatsArgs),
    /// Dataset comparison table from stats documents.
    Compare(CompareArgs),
    /// Draw a human-evaluation batch.
    SampleEval(SampleEvalArgs),
    /// Aggregate annotator sessions into a report.
    AggregateEval(AggregateEvalArgs),
    /// Export kept samples as training files.
    Export(ExportArgs),
    /// Run the full pipeline from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Source records file.
    path: PathBuf,
    /// Identifier recorded in sample ids.
    #[arg(long)]
    id: String,
    /// Record layout: caption-records, vqa-records, region-records, dialogue-records.
    #[arg(long)]
    format: SourceFormat,
    /// Task type of the produced samples.
    #[arg(long)]
    task: TaskType,
    /// Keep at most this many samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Output file.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ManifestArgs {
    image_dir: PathBuf,
    /// Source tag stored on every entry.
    #[arg(long, default_value = "local")]
    tag: String,
    /// Output file.
    #[arg(long, short)]
    out: PathBuf,
    /// Worker threads (1 runs sequentially).
    #[arg(long, default_value_t = exec::available_parallelism())]
    parallelism: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Text,
    Json,
}

#[derive(Args)]
struct RecipeArgs {
    /// genixer_i, genixer_s or kakapo.
    name: String,
    #[arg(long, value_enum, default_value_t = TableFormat::Text)]
    format: TableFormat,
}

#[derive(Args)]
struct RenderArgs {
    /// Task type of the produced samples.
    #[arg(long)]
    task: TaskType,
    /// Probability of including the task-specific instruction.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Seed of the first prompt.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of prompts, using seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// General-instruction pool file (defaults to the bundled pool).
    #[arg(long)]
    pool: Option<PathBuf>,
    /// TOML table of task to specific-instruction overrides.
    #[arg(long)]
    overrides: Option<PathBuf>,
}

/// Settings shared by commands that read a pipeline config.
#[derive(Args)]
struct ConfigOverrides {
    /// Pipeline config file (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides paths.output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker threads (1 runs sequentially).
    #[arg(long)]
    parallelism: Option<usize>,
    /// Probability of including the task-specific instruction.
    #[arg(long)]
    tau: Option<f64>,
    /// Run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run identifier (defaults to the config hash prefix).
    #[arg(long)]
    run_id: Option<String>,
    /// Filter keep threshold in [0, 1].
    #[arg(long)]
    threshold: Option<f64>,
    /// Filter score mode: rescaled or raw.
    #[arg(long)]
    score_mode: Option<ScoreMode>,
    /// Generator service URL (remote generator only; also VLGEN_GENERATOR_ENDPOINT).
    #[arg(long)]
    generator_endpoint: Option<String>,
    /// Embedding service URL (remote embedder only; also VLGEN_EMBEDDER_ENDPOINT).
    #[arg(long)]
    embedder_endpoint: Option<String>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigOverrides,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Stop after this many new requests.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct ParseArgs {
    /// Generation records (generations.jsonl).
    input: PathBuf,
    /// Output file.
    #[arg(long, short)]
    out: PathBuf,
    /// Where to write parse failures.
    #[arg(long)]
    errors: Option<PathBuf>,
    /// Accept `question:` / `answer:` markers in any case.
    #[arg(long)]
    lenient: bool,
    /// Backend id recorded in generator metadata.
    #[arg(long, default_value = "unknown")]
    backend: String,
    /// Worker threads (1 runs sequentially).
    #[arg(long, default_value_t = exec::available_parallelism())]
    parallelism: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderKind {
    Hash,
    Scripted,
    Remote,
}

#[derive(Args)]
struct FilterArgs {
    /// Sample records to filter.
    input: PathBuf,
    /// Corpus manifest the samples refer to.
    #[arg(long)]
    manifest: PathBuf,
    /// Image directory; defaults to the manifest's directory.
    #[arg(long)]
    image_root: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    out_dir: PathBuf,
    /// Keep threshold in [0, 1].
    #[arg(long, default_value_t = vlgen_core::filter::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// rescaled or raw.
    #[arg(long, default_value = "rescaled")]
    score_mode: ScoreMode,
    /// Embedding backend.
    #[arg(long, value_enum, default_value_t = EmbedderKind::Remote)]
    embedder: EmbedderKind,
    /// Vector dimension for the hash and scripted embedders.
    #[arg(long, default_value_t = 16)]
    dimension: usize,
    /// Cosine script for the scripted embedder.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Embedding service URL (also VLGEN_EMBEDDER_ENDPOINT).
    #[arg(long)]
    endpoint: Option<String>,
    /// Per-request timeout for the remote embedder.
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
    /// Worker threads (1 runs sequentially).
    #[arg(long, default_value_t = exec::available_parallelism())]
    parallelism: usize,
}

#[derive(Args)]
struct StatsArgs {
    input: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    out_dir: PathBuf,
    /// Terms shown in the noun and verb charts.
    #[arg(long, default_value_t = 20)]
    top: usize,
    /// Part-of-speech lexicon replacing the bundled one.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Worker threads (1 runs sequentially).
    #[arg(long, default_value_t = exec::available_parallelism())]
    parallelism: usize,
}

#[derive(Args)]
struct CompareArgs {
    /// LABEL=stats.json pairs, one row each.
    #[arg(required = true)]
    inputs: Vec<String>,
    /// Print CSV instead of a text table.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct SampleEvalArgs {
    input: PathBuf,
    /// Batch size.
    #[arg(long, short, default_value_t = 200)]
    n: usize,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// held_in or held_out.
    #[arg(long)]
    tag: EvalTag,
    /// Output file.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct AggregateEvalArgs {
    /// Batch file written by sample-eval.
    #[arg(long)]
    batch: PathBuf,
    /// Session files for the batch.
    #[arg(long, num_args = 1.., required = true)]
    sessions: Vec<PathBuf>,
    /// A second batch shown side by side.
    #[arg(long, requires = "other_sessions")]
    other_batch: Option<PathBuf>,
    /// Session files for the second batch.
    #[arg(long, num_args = 1.., requires = "other_batch")]
    other_sessions: Vec<PathBuf>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ExportArgs {
    input: PathBuf,
    /// conversation or flat.
    #[arg(long, default_value = "conversation")]
    format: ExportFormat,
    /// Output file.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigOverrides,
    /// Continue from the generation checkpoint.
    #[arg(long)]
    resume: bool,
    /// Stop generation after this many new requests.
    #[arg(long)]
    generation_limit: Option<usize>,
}

/// Failure classes map to exit codes 1 and 2.
enum Failure {
    Config(anyhow::Error),
    Stage(anyhow::Error),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => Failure::Config(e.into()),
            PipelineError::Stage { .. } => Failure::Stage(e.into()),
        }
    }
}

trait FailureExt<T> {
    fn config(self) -> Result<T, Failure>;
    fn stage(self, name: &str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> FailureExt<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn stage(self, name: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::Stage(e.into().context(format!("stage `{name}` failed"))))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if cli.version {
        outln!("{}", version_json());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("no command given; see `vlgen --help`");
        return ExitCode::from(1);
    };
    match dispatch(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn version_json() -> String {
    serde_json::json!({
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "parallel": cfg!(feature = "parallel"),
    })
    .to_string()
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Manifest(a) => manifest(a),
        Command::Recipe(a) => recipe(a),
        Command::Render(a) => render(a),
        Command::Generate(a) => generate(a),
        Command::Parse(a) => parse(a),
        Command::Filter(a) => filter(a),
        Command::Stats(a) => stats(a),
        Command::Compare(a) => compare(a),
        Command::SampleEval(a) => sample_eval(a),
        Command::AggregateEval(a) => aggregate_eval(a),
        Command::Export(a) => export(a),
        Command::Run(a) => run(a),
    }
}

fn print_json(value: &impl serde::Serialize) {
    outln!("{}", serde_json::to_string_pretty(value).expect("value serializes"));
}

fn check_parallelism(p: usize) -> Result<(), Failure> {
    if p == 0 {
        return Err(Failure::Config(anyhow!("--parallelism must be at least 1")));
    }
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<(), Failure> {
    if !a.format.compatible_with(a.task) {
        return Err(Failure::Config(anyhow!(
            "{:?} records cannot produce {} samples",
            a.format,
            a.task
        )));
    }
    let spec = SourceSpec {
        id: a.id,
        format: a.format,
        path: a.path,
        task: a.task,
        sample_limit: a.limit,
    };
    let samples = ingest_source(&spec).stage("ingest")?;
    write_jsonl(&a.out, &samples).stage("ingest")?;
    eprintln!("{} samples written to {}", samples.len(), a.out.display());
    Ok(())
}

fn manifest(a: ManifestArgs) -> Result<(), Failure> {
    check_parallelism(a.parallelism)?;
    let report = build_manifest(&a.image_dir, &a.tag, a.parallelism).stage("manifest")?;
    report.manifest.save(&a.out).stage("manifest")?;
    for s in &report.skipped {
        eprintln!("skipped {}: {}", s.path, s.reason);
    }
    eprintln!(
        "{} images indexed, {} skipped",
        report.manifest.entries.len(),
        report.skipped.len()
    );
    Ok(())
}

fn recipe(a: RecipeArgs) -> Result<(), Failure> {
    let recipe = build_recipe(&a.name).config()?;
    match a.format {
        TableFormat::Json => print_json(&recipe),
        TableFormat::Text => {
            for phase in &recipe.phases {
                outln!("{}", phase.name);
                for s in &phase.sources {
                    outln!(
                        "  {:<22} {:>10}  {:<28} {}",
                        s.source_id,
                        s.declared_size,
                        s.kind,
                        s.datasets
                    );
                }
            }
            outln!("total {}", recipe.total_declared());
            for n in &recipe.notes {
                outln!("note: {n}");
            }
        }
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<(), Failure> {
    let pool = match &a.pool {
        Some(p) => load_pool(p).config()?,
        None => InstructionPool::bundled(),
    };
    let mut spec = PromptSpec::new(pool, a.tau).config()?;
    if let Some(p) = &a.overrides {
        spec = spec.with_overrides_file(p).config()?;
    }
    for seed in a.seed..a.seed.saturating_add(a.count) {
        let p = render_prompt(&spec, a.task, seed);
        outln!(
            "{}",
            serde_json::json!({
                "seed": seed,
                "prompt_id": p.prompt_id(),
                "specific_included": p.specific_included,
                "prompt": p.full_text,
            })
        );
    }
    Ok(())
}

/// Loads the config, applies flag overrides and endpoint variables, and
/// validates the result.
fn load_config(o: &ConfigOverrides) -> Result<PipelineConfig, Failure> {
    let mut c = PipelineConfig::load(&o.config)?;
    if let Some(v) = &o.output_dir {
        // flags are relative to the working directory, not the config file
        c.paths.output_dir = std::path::absolute(v).config()?;
    }
    if let Some(v) = o.parallelism {
        c.parallelism = v;
    }
    if let Some(v) = o.tau {
        c.tau = v;
    }
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = &o.run_id {
        c.run_id = Some(v.clone());
    }
    if let Some(v) = o.threshold {
        c.threshold = v;
    }
    if let Some(v) = o.score_mode {
        c.score_mode = v;
    }
    if let GeneratorConfig::Remote { endpoint, .. } = &mut c.generator {
        if let Some(v) = o
            .generator_endpoint
            .clone()
            .or_else(|| std::env::var(GENERATOR_ENDPOINT_ENV).ok())
        {
            *endpoint = Some(v);
        }
    }
    if let EmbedderConfig::Remote { endpoint, .. } = &mut c.embedder {
        if let Some(v) = o
            .embedder_endpoint
            .clone()
            .or_else(|| std::env::var(EMBEDDER_ENDPOINT_ENV).ok())
        {
            *endpoint = Some(v);
        }
    }
    c.validate()?;
    Ok(c)
}

fn generate(a: GenerateArgs) -> Result<(), Failure> {
    let config = load_config(&a.config)?;
    let manifest = CorpusManifest::load(&config.manifest_path()).stage("manifest")?;
    manifest.validate().stage("manifest")?;
    let out = config.output_dir();
    std::fs::create_dir_all(&out)
        .with_context(|| out.display().to_string())
        .stage("generate")?;
    let backend = config.build_generator()?;
    let run = GenerationRun {
        run_id: config.run_id(),
        manifest,
        task: config.task,
        prompt_spec: config.prompt_spec()?,
        checkpoint_path: out.join("generate.ckpt"),
        output_path: out.join("generations.jsonl"),
    };
    let summary = run_generation(
        &run,
        backend.as_ref(),
        RunOptions {
            parallelism: config.parallelism,
            resume: a.resume,
            limit: a.limit,
        },
    )
    .stage("generate")?;
    print_json(&summary);
    Ok(())
}

fn parse(a: ParseArgs) -> Result<(), Failure> {
    check_parallelism(a.parallelism)?;
    let records = vlgen_core::genharness::read_generations(&a.input).stage("parse")?;
    let (parsed, failures, not_generated) =
        parse_generations(&records, &a.backend, ParseOptions { lenient: a.lenient }, a.parallelism);
    write_jsonl(&a.out, &parsed).stage("parse")?;
    if let Some(p) = &a.errors {
        write_jsonl(p, &failures).stage("parse")?;
    }
    print_json(&serde_json::json!({
        "records": records.len(),
        "parsed": parsed.len(),
        "parse_errors": failures.len(),
        "not_generated": not_generated.len(),
    }));
    Ok(())
}

fn endpoint(flag: Option<String>, var: &str) -> Result<String, Failure> {
    flag.or_else(|| std::env::var(var).ok())
        .ok_or_else(|| Failure::Config(anyhow!("no endpoint: pass --endpoint or set {var}")))
}

fn filter(a: FilterArgs) -> Result<(), Failure> {
    check_parallelism(a.parallelism)?;
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Failure::Config(anyhow!("--threshold must be in [0, 1]")));
    }
    let backend: Box<dyn EmbeddingBackend> = match a.embedder {
        EmbedderKind::Hash => {
            if a.dimension == 0 {
                return Err(Failure::Config(anyhow!("--dimension must be positive")));
            }
            Box::new(HashEmbedder::new(a.dimension))
        }
        EmbedderKind::Scripted => {
            let script = a
                .script
                .as_ref()
                .ok_or_else(|| Failure::Config(anyhow!("--script is required")))?;
            if a.dimension < 2 {
                return Err(Failure::Config(anyhow!("scripted embedder needs --dimension >= 2")));
            }
            Box::new(ScriptedEmbedder::load(script, a.dimension, 0.0).config()?)
        }
        EmbedderKind::Remote => {
            let url = endpoint(a.endpoint.clone(), EMBEDDER_ENDPOINT_ENV)?;
            Box::new(
                RemoteEmbedder::connect(&url, Duration::from_secs(a.timeout_secs), RetryPolicy::default())
                    .stage("filter")?,
            )
        }
    };
    let manifest = CorpusManifest::load(&a.manifest).stage("manifest")?;
    let image_root = a
        .image_root
        .clone()
        .unwrap_or_else(|| a.manifest.parent().map(Path::to_path_buf).unwrap_or_default());
    let config = FilterConfig {
        threshold: a.threshold,
        mode: a.score_mode,
        ..FilterConfig::new(image_root)
    };
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| a.out_dir.display().to_string())
        .stage("filter")?;
    let outputs = FilterOutputs::in_dir(&a.out_dir);
    let summary =
        run_filter(&a.input, backend.as_ref(), &manifest, &config, &outputs, a.parallelism).stage("filter")?;
    print_json(&summary);
    Ok(())
}

fn stats(a: StatsArgs) -> Result<(), Failure> {
    check_parallelism(a.parallelism)?;
    let tagger = match &a.lexicon {
        Some(p) => LexiconTagger::from_text(
            &std::fs::read_to_string(p)
                .with_context(|| p.display().to_string())
                .config()?,
        ),
        None => LexiconTagger::bundled(),
    };
    let stats = compute_stats(&a.input, &tagger, a.parallelism).stage("stats")?;
    write_report(&stats, &a.out_dir, a.top).stage("stats")?;
    print_json(&stats.totals());
    Ok(())
}

fn compare(a: CompareArgs) -> Result<(), Failure> {
    let mut docs = Vec::new();
    for input in &a.inputs {
        let (label, path) = input
            .split_once('=')
            .ok_or_else(|| Failure::Config(anyhow!("expected LABEL=PATH, got `{input}`")))?;
        let doc: StatsDocument = read_json(Path::new(path)).stage("compare")?;
        docs.push((label.to_string(), doc));
    }
    let rows: Vec<(&str, _)> = docs.iter().map(|(l, d)| (l.as_str(), &d.stats)).collect();
    let table = compare_datasets(&rows);
    if a.csv {
        out!("{}", table.to_csv());
    } else {
        out!("{}", table.to_text());
    }
    Ok(())
}

fn sample_eval(a: SampleEvalArgs) -> Result<(), Failure> {
    let batch = sample_batch(&a.input, a.n, a.seed, a.tag).stage("sample-eval")?;
    batch.save(&a.out).stage("sample-eval")?;
    eprintln!(
        "batch {} with {} samples written to {}",
        batch.header.batch_id,
        batch.samples.len(),
        a.out.display()
    );
    Ok(())
}

fn report_for(batch: &Path, sessions: &[PathBuf]) -> Result<EvalReport, Failure> {
    let batch = Batch::load(batch).stage("aggregate-eval")?;
    let sessions = sessions
        .iter()
        .map(|p| ingest_session(p, &batch).with_context(|| p.display().to_string()))
        .collect::<Result<Vec<_>, _>>()
        .stage("aggregate-eval")?;
    aggregate(&sessions, &batch).stage("aggregate-eval")
}

fn tag_name(r: &EvalReport) -> &'static str {
    match r.tag {
        EvalTag::HeldIn => "Held-in",
        EvalTag::HeldOut => "Held-out",
    }
}

fn aggregate_eval(a: AggregateEvalArgs) -> Result<(), Failure> {
    let report = report_for(&a.batch, &a.sessions)?;
    let other = match &a.other_batch {
        Some(b) => Some(report_for(b, &a.other_sessions)?),
        None => None,
    };
    if a.json {
        let mut v = BTreeMap::new();
        v.insert("report", &report);
        if let Some(o) = &other {
            v.insert("other", o);
        }
        print_json(&v);
        return Ok(());
    }
    let left = format!("{} ({})", tag_name(&report), report.batch_id);
    match &other {
        Some(o) => {
            let right = format!("{} ({})", tag_name(o), o.batch_id);
            out!("{}", render_side_by_side((&left, &report), (&right, o)));
        }
        None => {
            outln!("{left}");
            outln!("{:<18} {:>10} {:>13}", "Question Type", "#Samples", "Correct (~%)");
            for row in &report.rows {
                outln!(
                    "{:<18} {:>10} {:>13}",
                    row.label.display_name(),
                    row.samples,
                    row.percent
                );
            }
            outln!("{:<18} {:>10}", "Total", report.total);
        }
    }
    if let Some(ag) = &report.agreement {
        eprintln!(
            "{} annotators; type agreement {:.3}, verdict agreement {:.3}",
            ag.annotators, ag.type_agreement, ag.correct_agreement
        );
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<(), Failure> {
    let n = export_file(&a.input, &a.out, a.format).stage("export")?;
    eprintln!("{n} samples exported to {}", a.out.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let config = load_config(&a.config)?;
    let summary = run_pipeline(
        &config,
        PipelineOptions {
            resume: a.resume,
            generation_limit: a.generation_limit,
        },
    )?;
    let out = config.output_dir();
    write_json_pretty(&out.join("run_summary.json"), &summary).stage("run")?;
    print_json(&summary);
    Ok(())
}
