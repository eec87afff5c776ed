//! End-to-end run: render → generate → parse → dedup → filter → stats.
//!
//! Every artifact goes into one output directory together with
//! `run_manifest.json`, which records a hash of the configuration and a
//! checksum of every other file. Parallelism and the output location are
//! execution details: they are left out of the hash so that runs differing
//! only in those produce identical directories.

use std::error::Error as StdError;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exec;
use crate::filter::{
    filter_samples, EmbeddingBackend, FilterConfig, FilterSummary, HashEmbedder, RemoteEmbedder, ScoreMode,
    ScriptedEmbedder,
};
use crate::genharness::{
    read_generations, run_generation, GenerationRecord, GenerationRun, GenerationStatus, GenerationSummary,
    GeneratorBackend, RemoteGenerator, RemoteGeneratorConfig, RetryPolicy, RunOptions, ScriptedGenerator,
};
use crate::io::{self, RecordError};
use crate::parser::{parse_generation_with, ParseError, ParseOptions};
use crate::schema::{CorpusManifest, GeneratorMeta, Sample, TaskType};
use crate::stats::{self, LexiconTagger, Totals};
use crate::templates::{load_pool, render_prompt, InstructionPool, PromptSpec};

pub const RUN_MANIFEST: &str = "run_manifest.json";

fn default_parallelism() -> usize {
    1
}

fn default_threshold() -> f64 {
    crate::filter::DEFAULT_THRESHOLD
}

fn default_max_new_tokens() -> u32 {
    512
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_retries() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: PathBuf,
    /// Directory image refs are relative to; defaults to the manifest's
    /// directory.
    #[serde(default)]
    pub image_root: Option<PathBuf>,
    #[serde(default)]
    pub pool: Option<PathBuf>,
    /// TOML table of task → specific instruction overrides.
    #[serde(default)]
    pub specific_overrides: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeneratorConfig {
    Scripted {
        script: PathBuf,
    },
    Remote {
        #[serde(default)]
        endpoint: Option<String>,
        #[serde(default = "default_max_new_tokens")]
        max_new_tokens: u32,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
        #[serde(default)]
        decoding: serde_json::Map<String, serde_json::Value>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbedderConfig {
    Hash {
        dimension: usize,
    },
    Scripted {
        script: PathBuf,
        dimension: usize,
        #[serde(default)]
        default_cosine: f64,
    },
    Remote {
        #[serde(default)]
        endpoint: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: TaskType,
    pub tau: f64,
    pub seed: u64,
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub score_mode: ScoreMode,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub lenient_parse: bool,
    pub paths: PathsConfig,
    pub generator: GeneratorConfig,
    pub embedder: EmbedderConfig,
    /// Relative paths are resolved against this directory.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn StdError + Send + Sync>,
    },
}

impl PipelineError {
    fn stage(stage: &'static str, e: impl Into<Box<dyn StdError + Send + Sync>>) -> Self {
        PipelineError::Stage {
            stage,
            source: e.into(),
        }
    }

    pub fn stage_name(&self) -> Option<&'static str> {
        match self {
            PipelineError::Stage { stage, .. } => Some(stage),
            PipelineError::Config(_) => None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut config: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.paths.output_dir)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.resolve(&self.paths.manifest)
    }

    pub fn image_root(&self) -> PathBuf {
        match &self.paths.image_root {
            Some(p) => self.resolve(p),
            None => self.manifest_path().parent().map(Path::to_path_buf).unwrap_or_default(),
        }
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("run-{}", self.seed))
    }

    /// Checks ranges and that every referenced input exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must be in [0, 1], got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold must be in [0, 1], got {}", self.threshold));
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        let mut required = vec![("manifest", self.manifest_path()), ("image_root", self.image_root())];
        if let Some(p) = &self.paths.pool {
            required.push(("pool", self.resolve(p)));
        }
        if let Some(p) = &self.paths.specific_overrides {
            required.push(("specific_overrides", self.resolve(p)));
        }
        match &self.generator {
            GeneratorConfig::Scripted { script } => required.push(("generator.script", self.resolve(script))),
            GeneratorConfig::Remote { endpoint: None, .. } => {
                return bad("generator.endpoint is not set".into());
            }
            GeneratorConfig::Remote { .. } => {}
        }
        match &self.embedder {
            EmbedderConfig::Hash { dimension } if *dimension == 0 => {
                return bad("embedder.dimension must be positive".into());
            }
            EmbedderConfig::Scripted { script, dimension, .. } => {
                if *dimension < 2 {
                    return bad("scripted embedder needs dimension >= 2".into());
                }
                required.push(("embedder.script", self.resolve(script)));
            }
            EmbedderConfig::Remote { endpoint: None, .. } => {
                return bad("embedder.endpoint is not set".into());
            }
            _ => {}
        }
        for (name, path) in required {
            if !path.exists() {
                return bad(format!("{name}: {} does not exist", path.display()));
            }
        }
        Ok(())
    }

    /// The configuration as hashed: everything except the output location
    /// and parallelism.
    pub fn hashed_view(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("config is an object");
        obj.remove("parallelism");
        if let Some(paths) = obj.get_mut("paths").and_then(|p| p.as_object_mut()) {
            paths.remove("output_dir");
        }
        v
    }

    pub fn config_hash(&self) -> String {
        // serde_json maps are ordered, so this text is canonical
        let text = serde_json::to_string(&self.hashed_view()).expect("value serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }

    pub fn prompt_spec(&self) -> Result<PromptSpec, PipelineError> {
        let pool = match &self.paths.pool {
            Some(p) => load_pool(&self.resolve(p)).map_err(|e| PipelineError::stage("render", e))?,
            None => InstructionPool::bundled(),
        };
        let mut spec = PromptSpec::new(pool, self.tau).map_err(|e| PipelineError::Config(e.to_string()))?;
        if let Some(p) = &self.paths.specific_overrides {
            spec = spec
                .with_overrides_file(&self.resolve(p))
                .map_err(|e| PipelineError::stage("render", e))?;
        }
        Ok(spec)
    }

    pub fn build_generator(&self) -> Result<Box<dyn GeneratorBackend>, PipelineError> {
        match &self.generator {
            GeneratorConfig::Scripted { script } => Ok(Box::new(
                ScriptedGenerator::load(&self.resolve(script)).map_err(|e| PipelineError::stage("generate", e))?,
            )),
            GeneratorConfig::Remote {
                endpoint,
                max_new_tokens,
                timeout_secs,
                max_retries,
                decoding,
            } => Ok(Box::new(RemoteGenerator::new(
                RemoteGeneratorConfig {
                    endpoint: endpoint.clone().unwrap_or_default(),
                    image_root: self.image_root(),
                    timeout: Duration::from_secs(*timeout_secs),
                    max_new_tokens: *max_new_tokens,
                    decoding: decoding.clone(),
                },
                RetryPolicy {
                    max_retries: *max_retries,
                    ..RetryPolicy::default()
                },
            ))),
        }
    }

    pub fn build_embedder(&self) -> Result<Box<dyn EmbeddingBackend>, PipelineError> {
        match &self.embedder {
            EmbedderConfig::Hash { dimension } => Ok(Box::new(HashEmbedder::new(*dimension))),
            EmbedderConfig::Scripted {
                script,
                dimension,
                default_cosine,
            } => Ok(Box::new(
                ScriptedEmbedder::load(&self.resolve(script), *dimension, *default_cosine)
                    .map_err(|e| PipelineError::stage("filter", e))?,
            )),
            EmbedderConfig::Remote {
                endpoint,
                timeout_secs,
                max_retries,
            } => Ok(Box::new(
                RemoteEmbedder::connect(
                    endpoint.as_deref().unwrap_or_default(),
                    Duration::from_secs(*timeout_secs),
                    RetryPolicy {
                        max_retries: *max_retries,
                        ..RetryPolicy::default()
                    },
                )
                .map_err(|e| PipelineError::stage("filter", e))?,
            )),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineOptions {
    pub resume: bool,
    /// Stop generation after this many new requests.
    pub generation_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub image: String,
    pub seed: u64,
    pub prompt_id: String,
    pub specific_included: bool,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub image: String,
    pub error: ParseError,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub image: String,
    pub status: GenerationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub run_id: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<ArtifactRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub run_id: String,
    pub config_hash: String,
    /// False when generation stopped early; later stages did not run.
    pub complete: bool,
    pub generation: GenerationSummary,
    pub parsed: usize,
    pub parse_errors: usize,
    pub generation_failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub totals: Option<Totals>,
}

pub fn render_prompts(manifest: &CorpusManifest, spec: &PromptSpec, task: TaskType, run_id: &str) -> Vec<PromptRecord> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let seed = crate::rng::derive_seed(&[run_id, &e.image_ref]);
            let p = render_prompt(spec, task, seed);
            PromptRecord {
                image: e.image_ref.clone(),
                seed,
                prompt_id: p.prompt_id(),
                specific_included: p.specific_included,
                prompt: p.full_text,
            }
        })
        .collect()
}

/// Splits generation records into parsed samples, parse failures and
/// generation failures, keeping input order.
pub fn parse_generations(
    records: &[GenerationRecord],
    backend_id: &str,
    options: ParseOptions,
    parallelism: usize,
) -> (Vec<Sample>, Vec<ParseFailure>, Vec<GenerationFailure>) {
    enum Outcome {
        Parsed(Sample),
        ParseFailed(ParseFailure),
        NotGenerated(GenerationFailure),
    }
    let outcomes = exec::map_ordered(records, parallelism, |r| {
        if r.status != GenerationStatus::Ok {
            return Outcome::NotGenerated(GenerationFailure {
                image: r.image.clone(),
                status: r.status,
                error: r.error.clone(),
            });
        }
        match parse_generation_with(&r.raw_text, r.task, &r.image, options) {
            Ok(mut s) => {
                s.generator_meta = Some(GeneratorMeta {
                    backend: backend_id.to_string(),
                    prompt_id: r.prompt_id.clone(),
                    seed: r.seed,
                });
                Outcome::Parsed(s)
            }
            Err(error) => Outcome::ParseFailed(ParseFailure {
                image: r.image.clone(),
                error,
                raw_text: r.raw_text.clone(),
            }),
        }
    });
    let (mut parsed, mut failed, mut missing) = (Vec::new(), Vec::new(), Vec::new());
    for o in outcomes {
        match o {
            Outcome::Parsed(s) => parsed.push(s),
            Outcome::ParseFailed(f) => failed.push(f),
            Outcome::NotGenerated(g) => missing.push(g),
        }
    }
    (parsed, failed, missing)
}

/// Checksums of every file under `dir` except the run manifest, sorted by
/// relative path.
pub fn list_artifacts(dir: &Path) -> Result<Vec<ArtifactRecord>, RecordError> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| dir.to_path_buf());
            RecordError::io(&path, e.into())
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(dir).expect("walk stays under dir");
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if rel == RUN_MANIFEST {
            continue;
        }
        let bytes = std::fs::read(entry.path()).map_err(|e| RecordError::io(entry.path(), e))?;
        out.push(ArtifactRecord {
            path: rel,
            bytes: bytes.len() as u64,
            sha256: hex(&Sha256::digest(&bytes)),
        });
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

pub fn run_pipeline(config: &PipelineConfig, options: PipelineOptions) -> Result<PipelineSummary, PipelineError> {
    config.validate()?;
    let out = config.output_dir();
    std::fs::create_dir_all(&out).map_err(|e| PipelineError::stage("setup", RecordError::io(&out, e)))?;
    let run_id = config.run_id();
    let parallelism = config.parallelism;

    let manifest = CorpusManifest::load(&config.manifest_path()).map_err(|e| PipelineError::stage("manifest", e))?;
    manifest.validate().map_err(|e| PipelineError::stage("manifest", e))?;

    let spec = config.prompt_spec()?;
    let prompts = render_prompts(&manifest, &spec, config.task, &run_id);
    io::write_jsonl(&out.join("prompts.jsonl"), &prompts).map_err(|e| PipelineError::stage("render", e))?;

    let generator = config.build_generator()?;
    let run = GenerationRun {
        run_id: run_id.clone(),
        manifest: manifest.clone(),
        task: config.task,
        prompt_spec: spec,
        checkpoint_path: out.join("generate.ckpt"),
        output_path: out.join("generations.jsonl"),
    };
    let generation = run_generation(
        &run,
        generator.as_ref(),
        RunOptions {
            parallelism,
            resume: options.resume,
            limit: options.generation_limit,
        },
    )
    .map_err(|e| PipelineError::stage("generate", e))?;

    let mut summary = PipelineSummary {
        run_id: run_id.clone(),
        config_hash: config.config_hash(),
        complete: generation.complete,
        generation: generation.clone(),
        parsed: 0,
        parse_errors: 0,
        generation_failures: 0,
        filter: None,
        totals: None,
    };
    if !generation.complete {
        return Ok(summary);
    }

    let records = read_generations(&run.output_path).map_err(|e| PipelineError::stage("parse", e))?;
    let (parsed, parse_failures, generation_failures) = parse_generations(
        &records,
        &generator.id(),
        ParseOptions {
            lenient: config.lenient_parse,
        },
        parallelism,
    );
    let stage = |e| PipelineError::stage("parse", e);
    io::write_jsonl(&out.join("parsed.jsonl"), &parsed).map_err(stage)?;
    io::write_jsonl(&out.join("parse_errors.jsonl"), &parse_failures).map_err(stage)?;
    io::write_jsonl(&out.join("generation_errors.jsonl"), &generation_failures).map_err(stage)?;
    summary.parsed = parsed.len();
    summary.parse_errors = parse_failures.len();
    summary.generation_failures = generation_failures.len();

    let embedder = config.build_embedder()?;
    let filter_config = FilterConfig {
        threshold: config.threshold,
        mode: config.score_mode,
        image_root: config.image_root(),
        ..FilterConfig::new(config.image_root())
    };
    let parsed_count = parsed.len();
    let result = filter_samples(
        parsed,
        vec![],
        embedder.as_ref(),
        &manifest,
        &filter_config,
        parallelism,
    );
    let stage = |e| PipelineError::stage("filter", e);
    io::write_jsonl(&out.join("kept.jsonl"), &result.kept).map_err(stage)?;
    io::write_jsonl(&out.join("rejected.jsonl"), &result.rejected).map_err(stage)?;
    io::write_json_pretty(&out.join("filter_summary.json"), &result.summary).map_err(stage)?;

    let corpus_stats = stats::stats_parallel(&result.kept, &LexiconTagger::bundled(), parallelism);
    stats::write_report(&corpus_stats, &out.join("stats"), 30).map_err(|e| PipelineError::stage("stats", e))?;

    let stages = vec![
        StageRecord {
            name: "render".into(),
            input: manifest.entries.len(),
            output: prompts.len(),
        },
        StageRecord {
            name: "generate".into(),
            input: prompts.len(),
            output: generation.ok,
        },
        StageRecord {
            name: "parse".into(),
            input: generation.ok,
            output: parsed_count,
        },
        StageRecord {
            name: "dedup".into(),
            input: parsed_count,
            output: parsed_count - result.summary.duplicates,
        },
        StageRecord {
            name: "filter".into(),
            input: parsed_count - result.summary.duplicates,
            output: result.summary.kept,
        },
        StageRecord {
            name: "stats".into(),
            input: result.kept.len(),
            output: corpus_stats.samples as usize,
        },
    ];
    summary.filter = Some(result.summary);
    summary.totals = Some(corpus_stats.totals());

    let artifacts = list_artifacts(&out).map_err(|e| PipelineError::stage("manifest", e))?;
    let run_manifest = RunManifest {
        tool: "vlgen".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        run_id,
        config_hash: summary.config_hash.clone(),
        config: config.hashed_view(),
        stages,
        artifacts,
    };
    io::write_json_pretty(&out.join(RUN_MANIFEST), &run_manifest).map_err(|e| PipelineError::stage("manifest", e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
task = "rec"
tau = 0.5
seed = 3
[paths]
manifest = "m.jsonl"
output_dir = "out"
[generator]
kind = "scripted"
script = "g.jsonl"
[embedder]
kind = "hash"
dimension = 8
"#;

    #[test]
    fn config_validation_happens_first() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::from_toml(&BASE.replace("tau = 0.5", "tau = 1.2"), dir.path()).unwrap();
        let err = run_pipeline(&cfg, PipelineOptions::default()).unwrap_err();
        assert!(
            matches!(err, PipelineError::Config(ref m) if m.contains("tau")),
            "{err}"
        );
        assert!(!dir.path().join("out").exists());

        let cfg = PipelineConfig::from_toml(BASE, dir.path()).unwrap();
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(m)) if m.contains("manifest")));
        assert!(PipelineConfig::from_toml("task = 1", dir.path()).is_err());
    }

    #[test]
    fn hash_tracks_config_but_not_execution_details() {
        let dir = Path::new(".");
        let base = PipelineConfig::from_toml(BASE, dir).unwrap();
        let h = base.config_hash();
        let mut other = base.clone();
        other.parallelism = 8;
        other.paths.output_dir = "elsewhere".into();
        assert_eq!(other.config_hash(), h);
        for edit in ["tau = 0.6", "seed = 4"] {
            let key = edit.split(' ').next().unwrap();
            let original = BASE.lines().find(|l| l.starts_with(key)).unwrap();
            let changed = PipelineConfig::from_toml(&BASE.replace(original, edit), dir).unwrap();
            assert_ne!(changed.config_hash(), h, "{edit}");
        }
        let mut changed = base.clone();
        changed.threshold = 0.4;
        assert_ne!(changed.config_hash(), h);
        changed = base.clone();
        changed.score_mode = ScoreMode::Raw;
        assert_ne!(changed.config_hash(), h);
    }
}
