//! Generation harness: pairs every corpus image with a rendered prompt, sends
//! it to a generator backend and records the raw output.
//!
//! Runs are checkpointed. Each finished image is appended to the checkpoint
//! as one JSON line; a resumed run skips everything already recorded there.
//! When the last image completes, the output file is written in manifest
//! order and the checkpoint is compacted into the same order, so the
//! artifacts of a run do not depend on parallelism or on interruptions.

use std::collections::{HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::exec;
use crate::io::{self, RecordError};
use crate::rng::{derive_seed, SplitMix64};
use crate::schema::{CorpusManifest, ManifestEntry, TaskType};
use crate::templates::{render_prompt, PromptSpec};

pub const EOS_MARKER: &str = "</s>";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenError {
    #[error("request timed out")]
    Timeout,
    #[error("generator returned HTTP {status}: {message}")]
    RemoteError { status: u16, message: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("no scripted output for image `{0}`")]
    UnscriptedImage(String),
    #[error("scripted failure for `{image}`: {message}")]
    Scripted { image: String, message: String },
    #[error("cannot read image `{path}`: {message}")]
    ImageRead { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub text: String,
    pub retries: u32,
}

/// Something that turns (image, prompt) into generated text.
pub trait GeneratorBackend: Send + Sync {
    fn id(&self) -> String;
    fn generate(&self, image_ref: &str, prompt: &str) -> Result<Generated, GenError>;
}

/// Removes one trailing end-of-sequence marker; the text is otherwise
/// returned verbatim.
pub fn strip_eos(text: &str) -> &str {
    let trimmed = text.trim_end();
    match trimmed.strip_suffix(EOS_MARKER) {
        Some(rest) => rest,
        None => text,
    }
}

pub fn generate_one(backend: &dyn GeneratorBackend, image_ref: &str, prompt: &str) -> Result<Generated, GenError> {
    let mut out = backend.generate(image_ref, prompt)?;
    out.text = strip_eos(&out.text).to_string();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptEntry {
    Text { image: String, text: String },
    Error { image: String, error: String },
}

/// Mock backend answering from a fixed image → text map. Counts every call.
#[derive(Debug, Default)]
pub struct ScriptedGenerator {
    responses: HashMap<String, Result<String, String>>,
    calls: AtomicUsize,
    seen: Mutex<Vec<String>>,
}

impl ScriptedGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_text(mut self, image_ref: &str, text: &str) -> Self {
        self.responses.insert(image_ref.into(), Ok(text.into()));
        self
    }

    pub fn with_failure(mut self, image_ref: &str, message: &str) -> Self {
        self.responses.insert(image_ref.into(), Err(message.into()));
        self
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        entries.into_iter().fold(Self::new(), |g, e| match e {
            ScriptEntry::Text { image, text } => g.with_text(&image, &text),
            ScriptEntry::Error { image, error } => g.with_failure(&image, &error),
        })
    }

    /// Script file: one `{"image", "text"}` or `{"image", "error"}` per line.
    pub fn load(path: &Path) -> Result<Self, RecordError> {
        Ok(Self::from_entries(io::read_jsonl::<ScriptEntry>(path)?))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Image refs requested so far, in call order.
    pub fn requested(&self) -> Vec<String> {
        self.seen.lock().expect("poisoned").clone()
    }
}

impl GeneratorBackend for ScriptedGenerator {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn generate(&self, image_ref: &str, _prompt: &str) -> Result<Generated, GenError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen.lock().expect("poisoned").push(image_ref.to_string());
        match self.responses.get(image_ref) {
            Some(Ok(text)) => Ok(Generated {
                text: text.clone(),
                retries: 0,
            }),
            Some(Err(message)) => Err(GenError::Scripted {
                image: image_ref.into(),
                message: message.clone(),
            }),
            None => Err(GenError::UnscriptedImage(image_ref.into())),
        }
    }
}

/// Exponential backoff: the k-th retry waits `base * 2^k`, optionally
/// scaled by a jitter factor in `[0.5, 1.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base: Duration::from_millis(250),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32, key: &str) -> Duration {
        let exp = self.base.saturating_mul(1u32 << retry.min(16));
        if !self.jitter {
            return exp;
        }
        let factor = 0.5 + SplitMix64::new(derive_seed(&[key, &retry.to_string()])).next_f64();
        exp.mul_f64(factor)
    }

    /// Runs `attempt` until it succeeds, fails permanently, or the retry
    /// budget is spent. Returns the result and the number of retries used.
    pub fn run<T>(
        &self,
        key: &str,
        mut attempt: impl FnMut() -> Result<T, GenError>,
        sleep: impl Fn(Duration),
    ) -> (Result<T, GenError>, u32) {
        let mut retries = 0;
        loop {
            match attempt() {
                Ok(v) => return (Ok(v), retries),
                Err(e) if retries < self.max_retries && is_retryable(&e) => {
                    sleep(self.delay(retries, key));
                    retries += 1;
                }
                Err(e) => return (Err(e), retries),
            }
        }
    }
}

pub fn is_retryable(e: &GenError) -> bool {
    match e {
        GenError::Timeout | GenError::Transport(_) => true,
        GenError::RemoteError { status, .. } => *status >= 500 || *status == 429,
        _ => false,
    }
}

#[derive(Debug, Deserialize)]
struct ErrorBody {
    error: String,
}

pub(crate) fn map_ureq_error(e: ureq::Error) -> GenError {
    match e {
        ureq::Error::Status(status, response) => {
            let body = response.into_string().unwrap_or_default();
            let message = serde_json::from_str::<ErrorBody>(&body)
                .map(|b| b.error)
                .unwrap_or(body);
            GenError::RemoteError { status, message }
        }
        ureq::Error::Transport(t) => {
            let timed_out = std::error::Error::source(&t)
                .and_then(|s| s.downcast_ref::<std::io::Error>())
                .is_some_and(|io| matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock));
            if timed_out {
                GenError::Timeout
            } else {
                GenError::Transport(t.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteGeneratorConfig {
    pub endpoint: String,
    pub image_root: PathBuf,
    pub timeout: Duration,
    pub max_new_tokens: u32,
    /// Extra decoding parameters forwarded verbatim in the request body.
    #[serde(default)]
    pub decoding: serde_json::Map<String, serde_json::Value>,
}

/// Client for `POST {endpoint}/generate`.
///
/// Request body: `{"image": base64, "prompt": text, "max_new_tokens": int}`
/// plus any extra decoding parameters. Response: `{"text": string}`; errors
/// come back as an HTTP status with `{"error": string}`.
pub struct RemoteGenerator {
    config: RemoteGeneratorConfig,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

#[derive(Debug, Deserialize)]
struct GenerateResponse {
    text: String,
}

impl RemoteGenerator {
    pub fn new(config: RemoteGeneratorConfig, retry: RetryPolicy) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        RemoteGenerator { config, retry, agent }
    }

    fn url(&self) -> String {
        format!("{}/generate", self.config.endpoint.trim_end_matches('/'))
    }

    fn request_body(&self, image: &[u8], prompt: &str) -> serde_json::Value {
        let mut body = self.config.decoding.clone();
        body.insert(
            "image".into(),
            base64::engine::general_purpose::STANDARD.encode(image).into(),
        );
        body.insert("prompt".into(), prompt.into());
        body.insert("max_new_tokens".into(), self.config.max_new_tokens.into());
        serde_json::Value::Object(body)
    }
}

impl GeneratorBackend for RemoteGenerator {
    fn id(&self) -> String {
        format!("remote:{}", self.config.endpoint)
    }

    fn generate(&self, image_ref: &str, prompt: &str) -> Result<Generated, GenError> {
        let path = self.config.image_root.join(image_ref);
        let image = std::fs::read(&path).map_err(|e| GenError::ImageRead {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let body = self.request_body(&image, prompt);
        let url = self.url();
        let (result, retries) = self.retry.run(
            image_ref,
            || {
                let response = self.agent.post(&url).send_json(&body).map_err(map_ureq_error)?;
                response
                    .into_json::<GenerateResponse>()
                    .map(|r| r.text)
                    .map_err(|e| GenError::Transport(format!("bad response body: {e}")))
            },
            std::thread::sleep,
        );
        result.map(|text| Generated { text, retries })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationStatus {
    Ok,
    TransportError,
    EmptyOutput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub image: String,
    pub task: TaskType,
    pub seed: u64,
    pub prompt_id: String,
    pub prompt: String,
    pub raw_text: String,
    pub status: GenerationStatus,
    pub retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CheckpointHeader {
    checkpoint_version: u32,
    run_id: String,
    task: TaskType,
    manifest_count: usize,
}

/// Everything that defines a generation run.
#[derive(Debug, Clone)]
pub struct GenerationRun {
    pub run_id: String,
    pub manifest: CorpusManifest,
    pub task: TaskType,
    pub prompt_spec: PromptSpec,
    pub checkpoint_path: PathBuf,
    pub output_path: PathBuf,
}

impl GenerationRun {
    pub fn seed_for(&self, image_ref: &str) -> u64 {
        derive_seed(&[&self.run_id, image_ref])
    }

    fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            checkpoint_version: 1,
            run_id: self.run_id.clone(),
            task: self.task,
            manifest_count: self.manifest.entries.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub parallelism: usize,
    /// Continue from an existing checkpoint instead of starting over.
    pub resume: bool,
    /// Stop after this many new requests (used to simulate interruption).
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub total: usize,
    pub ok: usize,
    pub transport_error: usize,
    pub empty_output: usize,
    pub pending: usize,
    pub complete: bool,
    /// Requests sent during this invocation.
    pub requests: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Io(#[from] RecordError),
    #[error("checkpoint {path} line {line}: {detail}")]
    CheckpointCorrupt { path: PathBuf, line: usize, detail: String },
}

fn generate_for_entry(run: &GenerationRun, backend: &dyn GeneratorBackend, entry: &ManifestEntry) -> GenerationRecord {
    let seed = run.seed_for(&entry.image_ref);
    let prompt = render_prompt(&run.prompt_spec, run.task, seed);
    let (raw_text, status, retries, error) = match generate_one(backend, &entry.image_ref, &prompt.full_text) {
        Ok(g) if g.text.trim().is_empty() => (g.text, GenerationStatus::EmptyOutput, g.retries, None),
        Ok(g) => (g.text, GenerationStatus::Ok, g.retries, None),
        Err(e) => (String::new(), GenerationStatus::TransportError, 0, Some(e.to_string())),
    };
    GenerationRecord {
        image: entry.image_ref.clone(),
        task: run.task,
        seed,
        prompt_id: prompt.prompt_id(),
        prompt: prompt.full_text,
        raw_text,
        status,
        retries,
        error,
    }
}

/// Reads a checkpoint written by a previous run of `run`.
pub fn read_checkpoint(run: &GenerationRun) -> Result<Vec<GenerationRecord>, RunError> {
    let path = &run.checkpoint_path;
    let corrupt = |line: usize, detail: String| RunError::CheckpointCorrupt {
        path: path.clone(),
        line,
        detail,
    };
    let bytes = std::fs::read(path).map_err(|e| RecordError::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| corrupt(0, e.to_string()))?;
    if !text.is_empty() && !text.ends_with('\n') {
        let line = text.lines().count();
        return Err(corrupt(line, "truncated record".into()));
    }
    let mut lines = text.lines().enumerate();
    let Some((_, header_line)) = lines.next() else {
        return Err(corrupt(1, "missing header".into()));
    };
    let header: CheckpointHeader = serde_json::from_str(header_line).map_err(|e| corrupt(1, e.to_string()))?;
    if header != run.header() {
        return Err(corrupt(1, "checkpoint belongs to a different run".into()));
    }
    let known: HashSet<&str> = run.manifest.entries.iter().map(|e| e.image_ref.as_str()).collect();
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (idx, line) in lines {
        let record: GenerationRecord = serde_json::from_str(line).map_err(|e| corrupt(idx + 1, e.to_string()))?;
        if !known.contains(record.image.as_str()) {
            return Err(corrupt(idx + 1, format!("image `{}` not in manifest", record.image)));
        }
        if !seen.insert(record.image.clone()) {
            return Err(corrupt(idx + 1, format!("image `{}` recorded twice", record.image)));
        }
        records.push(record);
    }
    Ok(records)
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut line = serde_json::to_string(value).expect("record serializes");
    line.push('\n');
    line
}

fn write_atomically(path: &Path, contents: &str) -> Result<(), RecordError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| RecordError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| RecordError::io(path, e))
}

/// Processes every manifest entry not yet in the checkpoint.
pub fn run_generation(
    run: &GenerationRun,
    backend: &dyn GeneratorBackend,
    options: RunOptions,
) -> Result<GenerationSummary, RunError> {
    let previous = if options.resume && run.checkpoint_path.exists() {
        read_checkpoint(run)?
    } else {
        write_atomically(&run.checkpoint_path, &json_line(&run.header()))?;
        Vec::new()
    };

    let done: HashSet<&str> = previous.iter().map(|r| r.image.as_str()).collect();
    let mut pending: Vec<&ManifestEntry> = run
        .manifest
        .entries
        .iter()
        .filter(|e| !done.contains(e.image_ref.as_str()))
        .collect();
    if let Some(limit) = options.limit {
        pending.truncate(limit);
    }

    let checkpoint = OpenOptions::new()
        .append(true)
        .open(&run.checkpoint_path)
        .map_err(|e| RecordError::io(&run.checkpoint_path, e))?;
    let checkpoint = Mutex::new(checkpoint);
    let fresh: Vec<Result<GenerationRecord, RecordError>> =
        exec::map_ordered(&pending, options.parallelism.max(1), |entry| {
            let record = generate_for_entry(run, backend, entry);
            let line = json_line(&record);
            let mut file = checkpoint.lock().expect("checkpoint lock poisoned");
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| RecordError::io(&run.checkpoint_path, e))?;
            Ok(record)
        });
    drop(checkpoint);
    let requests = fresh.len();

    let mut by_image: HashMap<String, GenerationRecord> = previous.into_iter().map(|r| (r.image.clone(), r)).collect();
    for record in fresh {
        let record = record?;
        by_image.insert(record.image.clone(), record);
    }

    let mut summary = GenerationSummary {
        total: run.manifest.entries.len(),
        requests,
        ..Default::default()
    };
    let ordered: Vec<&GenerationRecord> = run
        .manifest
        .entries
        .iter()
        .filter_map(|e| by_image.get(&e.image_ref))
        .collect();
    for r in &ordered {
        match r.status {
            GenerationStatus::Ok => summary.ok += 1,
            GenerationStatus::TransportError => summary.transport_error += 1,
            GenerationStatus::EmptyOutput => summary.empty_output += 1,
        }
    }
    summary.pending = summary.total - ordered.len();
    summary.complete = summary.pending == 0;

    if summary.complete {
        io::write_jsonl(&run.output_path, ordered.iter().copied())?;
        let mut compacted = json_line(&run.header());
        for r in &ordered {
            compacted.push_str(&json_line(r));
        }
        write_atomically(&run.checkpoint_path, &compacted)?;
    }
    Ok(summary)
}

/// Continues an interrupted run from its checkpoint.
pub fn resume(
    run: &GenerationRun,
    backend: &dyn GeneratorBackend,
    parallelism: usize,
) -> Result<GenerationSummary, RunError> {
    run_generation(
        run,
        backend,
        RunOptions {
            parallelism,
            resume: true,
            limit: None,
        },
    )
}

pub fn read_generations(path: &Path) -> Result<Vec<GenerationRecord>, RecordError> {
    io::read_jsonl(path)
}
