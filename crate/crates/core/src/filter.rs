//! Quality gate for region data: crop each referenced region, embed the crop
//! and its paired expression, and keep the sample only if every pair is
//! similar enough. Also removes duplicate samples.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exec;
use crate::genharness::{map_ureq_error, GenError, RetryPolicy};
use crate::io::{self, RecordError};
use crate::parser::{scan_literals, valid_boxes};
use crate::rng::{derive_seed, SplitMix64};
use crate::schema::{box_to_pixels, validate_sample, CorpusManifest, RegionBox, Sample, TaskType};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const RESCALE_FACTOR: f64 = 2.5;
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

pub const SCORE_SCALE_NOTE: &str = "threshold semantics are an interpretation: \
in rescaled mode the score is min(2.5 * max(cosine, 0), 1); in raw mode it is max(cosine, 0)";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Raw,
    #[default]
    Rescaled,
}

impl FromStr for ScoreMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(ScoreMode::Raw),
            "rescaled" => Ok(ScoreMode::Rescaled),
            other => Err(format!("unknown score mode `{other}` (expected raw or rescaled)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("vector dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector is not unit length (norm {norm})")]
    NotUnit { norm: f64 },
    #[error(transparent)]
    Request(#[from] GenError),
    #[error("cannot encode crop: {0}")]
    Encode(String),
}

/// Dot product accumulated in f64. Inputs are assumed unit length.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum())
}

pub fn score_from_cosine(cos: f64, mode: ScoreMode) -> f64 {
    let clamped = cos.clamp(0.0, 1.0);
    match mode {
        ScoreMode::Raw => clamped,
        ScoreMode::Rescaled => (RESCALE_FACTOR * clamped).min(1.0),
    }
}

pub fn similarity_score(text: &[f32], image: &[f32], mode: ScoreMode) -> Result<f64, EmbedError> {
    Ok(score_from_cosine(cosine(text, image)?, mode))
}

pub trait EmbeddingBackend: Send + Sync {
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Vec<f32>, EmbedError>;
    fn embed_image(&self, png: &[u8]) -> Result<Vec<f32>, EmbedError>;
}

pub fn check_vector(v: Vec<f32>, dimension: usize) -> Result<Vec<f32>, EmbedError> {
    if v.len() != dimension {
        return Err(EmbedError::DimensionMismatch {
            expected: dimension,
            found: v.len(),
        });
    }
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(EmbedError::NotUnit { norm });
    }
    Ok(v)
}

fn unit_vector_from_seed(seed: u64, dimension: usize) -> Vec<f32> {
    let mut rng = SplitMix64::new(seed);
    loop {
        let raw: Vec<f64> = (0..dimension).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return raw.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

/// Deterministic mock: every input hashes to its own pseudo-random unit
/// vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 1, "dimension must be positive");
        HashEmbedder { dimension }
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-mock:{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        Ok(unit_vector_from_seed(derive_seed(&["text", text]), self.dimension))
    }

    fn embed_image(&self, png: &[u8]) -> Result<Vec<f32>, EmbedError> {
        let digest = Sha256::digest(png);
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        Ok(unit_vector_from_seed(seed, self.dimension))
    }
}

/// Mock with controlled similarities. Every image embeds to `e0`; a text
/// with scripted cosine `c` embeds to `c*e0 + sqrt(1-c^2)*e1`, so its
/// cosine with any crop is exactly `c` (up to f32 rounding).
#[derive(Debug, Clone)]
pub struct ScriptedEmbedder {
    dimension: usize,
    cosines: HashMap<String, f64>,
    default_cosine: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedCosine {
    pub text: String,
    pub cosine: f64,
}

impl ScriptedEmbedder {
    pub fn new(dimension: usize, default_cosine: f64) -> Self {
        assert!(dimension >= 2, "scripted embedder needs two axes");
        ScriptedEmbedder {
            dimension,
            cosines: HashMap::new(),
            default_cosine,
        }
    }

    pub fn with_cosine(mut self, text: &str, cosine: f64) -> Self {
        self.cosines.insert(text.to_string(), cosine);
        self
    }

    /// Script file: one `{"text", "cosine"}` per line.
    pub fn load(path: &Path, dimension: usize, default_cosine: f64) -> Result<Self, RecordError> {
        Ok(io::read_jsonl::<ScriptedCosine>(path)?
            .into_iter()
            .fold(Self::new(dimension, default_cosine), |e, s| {
                e.with_cosine(&s.text, s.cosine)
            }))
    }

    fn axis(&self, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; self.dimension];
        v[i] = 1.0;
        v
    }
}

impl EmbeddingBackend for ScriptedEmbedder {
    fn id(&self) -> String {
        format!("scripted-mock:{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let c = self
            .cosines
            .get(text)
            .copied()
            .unwrap_or(self.default_cosine)
            .clamp(-1.0, 1.0);
        let mut v = vec![0.0; self.dimension];
        v[0] = c as f32;
        v[1] = (1.0 - c * c).sqrt() as f32;
        Ok(v)
    }

    fn embed_image(&self, _png: &[u8]) -> Result<Vec<f32>, EmbedError> {
        Ok(self.axis(0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderInfo {
    pub dimension: usize,
    pub model: String,
}

#[derive(Debug, Deserialize)]
struct VectorResponse {
    vector: Vec<f32>,
}

/// Client for the embedding service: `GET /info`, `POST /embed_text` with
/// `{"text"}`, `POST /embed_image` with `{"image": base64}`. Both POSTs
/// answer `{"vector": [...]}`.
pub struct RemoteEmbedder {
    endpoint: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    info: EmbedderInfo,
}

impl RemoteEmbedder {
    /// Queries `/info` and returns a client bound to the reported dimension.
    pub fn connect(endpoint: &str, timeout: std::time::Duration, retry: RetryPolicy) -> Result<Self, EmbedError> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let url = format!("{endpoint}/info");
        let (info, _) = retry.run(
            &url,
            || {
                agent
                    .get(&url)
                    .call()
                    .map_err(map_ureq_error)?
                    .into_json::<EmbedderInfo>()
                    .map_err(|e| GenError::Transport(format!("bad /info body: {e}")))
            },
            std::thread::sleep,
        );
        Ok(RemoteEmbedder {
            endpoint,
            agent,
            retry,
            info: info?,
        })
    }

    pub fn info(&self) -> &EmbedderInfo {
        &self.info
    }

    fn post(&self, route: &str, body: serde_json::Value) -> Result<Vec<f32>, EmbedError> {
        let url = format!("{}/{route}", self.endpoint);
        let (result, _) = self.retry.run(
            &url,
            || {
                self.agent
                    .post(&url)
                    .send_json(&body)
                    .map_err(map_ureq_error)?
                    .into_json::<VectorResponse>()
                    .map_err(|e| GenError::Transport(format!("bad {route} body: {e}")))
            },
            std::thread::sleep,
        );
        check_vector(result?.vector, self.info.dimension)
    }
}

impl EmbeddingBackend for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}:{}", self.endpoint, self.info.model)
    }

    fn dimension(&self) -> usize {
        self.info.dimension
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        self.post("embed_text", serde_json::json!({ "text": text }))
    }

    fn embed_image(&self, png: &[u8]) -> Result<Vec<f32>, EmbedError> {
        let image = base64::engine::general_purpose::STANDARD.encode(png);
        self.post("embed_image", serde_json::json!({ "image": image }))
    }
}

/// How referring expressions are cut out of REC questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRules {
    pub version: String,
    pub prefixes: Vec<String>,
    pub suffixes: Vec<String>,
    /// Removed once from the start after the prefix, e.g. "the".
    pub leading_articles: Vec<String>,
}

impl Default for ExtractionRules {
    fn default() -> Self {
        let list = |items: &[&str]| items.iter().map(|s| s.to_string()).collect();
        ExtractionRules {
            version: "rec-v1".into(),
            prefixes: list(&[
                "I need the coordinates of",
                "I'd like to request the coordinates of",
                "Please provide the coordinates of",
                "Please provide the bounding box of",
                "Provide the bounding box of",
                "Give me the coordinates of",
                "What are the coordinates of",
                "Can you locate",
                "Where is",
                "Where are",
                "Locate",
                "Find",
            ]),
            suffixes: list(&[
                "Can you assist",
                "Could you help",
                "Answer with a bounding box",
                "within the photo",
                "within the image",
                "in the image",
                "in this image",
                "in the picture",
                "in the photo",
            ]),
            leading_articles: list(&["the"]),
        }
    }
}

fn strip_prefix_ci<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    let head = text.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &text[prefix.len()..])
}

fn strip_suffix_ci<'a>(text: &'a str, suffix: &str) -> Option<&'a str> {
    let cut = text.len().checked_sub(suffix.len())?;
    let tail = text.get(cut..)?;
    tail.eq_ignore_ascii_case(suffix).then(|| &text[..cut])
}

impl ExtractionRules {
    /// The referring expression of a REC question. Falls back to the whole
    /// question when stripping would leave nothing.
    pub fn extract(&self, question: &str) -> String {
        let question = question.split_whitespace().collect::<Vec<_>>().join(" ");
        let mut t = question.as_str();
        loop {
            let before = t;
            t = t.trim_end().trim_end_matches(['.', '?', '!', ',', ';', ':']).trim_end();
            for s in &self.suffixes {
                if let Some(rest) = strip_suffix_ci(t, s) {
                    if rest.is_empty() || rest.ends_with(|c: char| c.is_whitespace() || c.is_ascii_punctuation()) {
                        t = rest;
                        break;
                    }
                }
            }
            if t == before {
                break;
            }
        }
        for p in &self.prefixes {
            if let Some(rest) = strip_prefix_ci(t, p) {
                if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                    t = rest;
                    break;
                }
            }
        }
        let mut t = t.trim();
        for a in &self.leading_articles {
            if let Some(rest) = strip_prefix_ci(t, a) {
                if rest.starts_with(char::is_whitespace) && !rest.trim().is_empty() {
                    t = rest.trim_start();
                    break;
                }
            }
        }
        if t.is_empty() {
            question
        } else {
            t.to_string()
        }
    }
}

/// Prose of `text` with every bracketed coordinate literal removed.
pub fn strip_literals(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for lit in scan_literals(text) {
        out.push_str(&text[last..lit.start]);
        last = lit.end;
    }
    out.push_str(&text[last..]);
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringPair {
    pub expression: String,
    pub region: RegionBox,
}

/// (expression, region) pairs to score. REC pairs each answer box with the
/// expression from its question; REG pairs each question box with the
/// answer text. Other tasks yield nothing.
pub fn scoring_pairs(sample: &Sample, rules: &ExtractionRules) -> Vec<ScoringPair> {
    let mut pairs = Vec::new();
    for turn in &sample.turns {
        match sample.task {
            TaskType::Rec => {
                let expression = rules.extract(&turn.question);
                pairs.extend(valid_boxes(&turn.answer).into_iter().map(|b| ScoringPair {
                    expression: expression.clone(),
                    region: b.region,
                }));
            }
            TaskType::Reg => {
                let expression = strip_literals(&turn.answer);
                pairs.extend(valid_boxes(&turn.question).into_iter().map(|b| ScoringPair {
                    expression: expression.clone(),
                    region: b.region,
                }));
            }
            _ => {}
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    BelowThreshold,
    Duplicate,
    ParseFailed,
    CropFailed,
    EmbedFailed,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::BelowThreshold => "below_threshold",
            Reason::Duplicate => "duplicate",
            Reason::ParseFailed => "parse_failed",
            Reason::CropFailed => "crop_failed",
            Reason::EmbedFailed => "embed_failed",
            Reason::NotApplicable => "n/a",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub sample_id: String,
    pub scores: Vec<f64>,
    pub decision: Decision,
    pub reason: Reason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl FilterVerdict {
    fn reject(sample_id: &str, reason: Reason, scores: Vec<f64>, detail: Option<String>) -> Self {
        FilterVerdict {
            sample_id: sample_id.into(),
            scores,
            decision: Decision::Reject,
            reason,
            detail,
        }
    }

    pub fn is_kept(&self) -> bool {
        self.decision == Decision::Keep
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub threshold: f64,
    pub mode: ScoreMode,
    pub rules: ExtractionRules,
    /// Directory that manifest image refs are relative to.
    pub image_root: PathBuf,
    /// Also score nonregion samples: whole image against the first answer.
    pub full_image_nonregion: bool,
}

impl FilterConfig {
    pub fn new(image_root: impl Into<PathBuf>) -> Self {
        FilterConfig {
            threshold: DEFAULT_THRESHOLD,
            mode: ScoreMode::default(),
            rules: ExtractionRules::default(),
            image_root: image_root.into(),
            full_image_nonregion: false,
        }
    }
}

fn encode_png(img: &image::DynamicImage) -> Result<Vec<u8>, EmbedError> {
    let mut buf = Cursor::new(Vec::new());
    image::DynamicImage::ImageRgb8(img.to_rgb8())
        .write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| EmbedError::Encode(e.to_string()))?;
    Ok(buf.into_inner())
}

/// PNG bytes of the pixel crop covering `region`.
pub fn crop_png(img: &image::DynamicImage, region: &RegionBox) -> Result<Vec<u8>, EmbedError> {
    let r = box_to_pixels(region, img.width(), img.height());
    encode_png(&img.crop_imm(r.left, r.top, r.width(), r.height()))
}

pub fn score_sample(
    sample: &Sample,
    backend: &dyn EmbeddingBackend,
    manifest: &CorpusManifest,
    config: &FilterConfig,
) -> FilterVerdict {
    let id = sample.id.as_str();
    let violations = validate_sample(sample);
    if let Some(v) = violations.first() {
        return FilterVerdict::reject(
            id,
            Reason::ParseFailed,
            vec![],
            Some(format!("{:?}: {}", v.code, v.detail)),
        );
    }

    let full_image = !sample.task.is_region() && config.full_image_nonregion;
    let pairs = scoring_pairs(sample, &config.rules);
    if pairs.is_empty() && !full_image {
        return FilterVerdict {
            sample_id: id.into(),
            scores: vec![],
            decision: Decision::Keep,
            reason: Reason::NotApplicable,
            detail: None,
        };
    }

    if manifest.get(&sample.image_ref).is_none() {
        return FilterVerdict::reject(
            id,
            Reason::CropFailed,
            vec![],
            Some(format!("image `{}` not in manifest", sample.image_ref)),
        );
    }
    let path = config.image_root.join(&sample.image_ref);
    let img = match image::open(&path) {
        Ok(img) => img,
        Err(e) => {
            return FilterVerdict::reject(id, Reason::CropFailed, vec![], Some(format!("{}: {e}", path.display())))
        }
    };

    let scored: Result<Vec<f64>, EmbedError> = if full_image {
        let text = strip_literals(&sample.turns[0].answer);
        encode_png(&img).and_then(|png| {
            let s = similarity_score(&backend.embed_text(&text)?, &backend.embed_image(&png)?, config.mode)?;
            Ok(vec![s])
        })
    } else {
        pairs
            .iter()
            .map(|p| {
                let png = crop_png(&img, &p.region)?;
                similarity_score(
                    &backend.embed_text(&p.expression)?,
                    &backend.embed_image(&png)?,
                    config.mode,
                )
            })
            .collect()
    };
    let scores = match scored {
        Ok(s) => s,
        Err(e) => return FilterVerdict::reject(id, Reason::EmbedFailed, vec![], Some(e.to_string())),
    };
    if scores.iter().all(|&s| s >= config.threshold) {
        FilterVerdict {
            sample_id: id.into(),
            scores,
            decision: Decision::Keep,
            reason: Reason::NotApplicable,
            detail: None,
        }
    } else {
        FilterVerdict::reject(id, Reason::BelowThreshold, scores, None)
    }
}

/// Identity used for deduplication: the image plus the whitespace-collapsed,
/// lowercased, canonicalized question text of every turn.
pub fn dedup_key(sample: &Sample) -> (String, String) {
    let questions = sample
        .turns
        .iter()
        .map(|t| {
            crate::parser::canonicalize_text(&t.question, sample.task)
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .to_lowercase()
        })
        .collect::<Vec<_>>()
        .join("\n");
    (sample.image_ref.clone(), questions)
}

/// Drops later repeats of a key, keeping the first occurrence in order.
pub fn dedup(samples: Vec<Sample>) -> (Vec<Sample>, usize) {
    let mut seen = HashSet::new();
    let before = samples.len();
    let kept: Vec<Sample> = samples.into_iter().filter(|s| seen.insert(dedup_key(s))).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub verdict: FilterVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub input: usize,
    pub duplicates: usize,
    pub kept: usize,
    pub rejected: usize,
    pub pass_rate: f64,
    pub reasons: BTreeMap<String, usize>,
    pub threshold: f64,
    pub score_mode: ScoreMode,
    pub extraction_rules: String,
    pub backend: String,
    pub note: String,
}

#[derive(Debug, Clone)]
pub struct FilterOutputs {
    pub kept: PathBuf,
    pub rejected: PathBuf,
    pub summary: PathBuf,
}

impl FilterOutputs {
    pub fn in_dir(dir: &Path) -> Self {
        FilterOutputs {
            kept: dir.join("kept.jsonl"),
            rejected: dir.join("rejected.jsonl"),
            summary: dir.join("filter_summary.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub kept: Vec<Sample>,
    pub rejected: Vec<RejectedRecord>,
    pub summary: FilterSummary,
}

/// Dedups then scores `samples`. Unparseable input records can be passed
/// as `unreadable` (id, detail) and are rejected as `parse_failed`.
pub fn filter_samples(
    samples: Vec<Sample>,
    unreadable: Vec<(String, String)>,
    backend: &dyn EmbeddingBackend,
    manifest: &CorpusManifest,
    config: &FilterConfig,
    parallelism: usize,
) -> FilterResult {
    let input = samples.len() + unreadable.len();
    let (unique, duplicates) = dedup(samples);
    let verdicts = exec::map_ordered(&unique, parallelism, |s| score_sample(s, backend, manifest, config));

    let mut kept = Vec::new();
    let mut rejected: Vec<RejectedRecord> = unreadable
        .into_iter()
        .map(|(id, detail)| RejectedRecord {
            verdict: FilterVerdict::reject(&id, Reason::ParseFailed, vec![], Some(detail)),
            sample: None,
        })
        .collect();
    for (sample, verdict) in unique.into_iter().zip(verdicts) {
        if verdict.is_kept() {
            kept.push(sample);
        } else {
            rejected.push(RejectedRecord {
                verdict,
                sample: Some(sample),
            });
        }
    }

    let mut reasons = BTreeMap::new();
    for r in &rejected {
        *reasons.entry(r.verdict.reason.as_str().to_string()).or_insert(0) += 1;
    }
    if duplicates > 0 {
        reasons.insert(Reason::Duplicate.as_str().to_string(), duplicates);
    }
    let scored = input - duplicates;
    let summary = FilterSummary {
        input,
        duplicates,
        kept: kept.len(),
        rejected: rejected.len(),
        pass_rate: if scored == 0 {
            0.0
        } else {
            kept.len() as f64 / scored as f64
        },
        reasons,
        threshold: config.threshold,
        score_mode: config.mode,
        extraction_rules: config.rules.version.clone(),
        backend: backend.id(),
        note: SCORE_SCALE_NOTE.into(),
    };
    FilterResult {
        kept,
        rejected,
        summary,
    }
}

/// Reads samples from `input`, filters them and writes the kept samples,
/// rejected records and summary. Only output failures are fatal.
pub fn run_filter(
    input: &Path,
    backend: &dyn EmbeddingBackend,
    manifest: &CorpusManifest,
    config: &FilterConfig,
    outputs: &FilterOutputs,
    parallelism: usize,
) -> Result<FilterSummary, RecordError> {
    let mut samples = Vec::new();
    let mut unreadable = Vec::new();
    for (line, record) in io::read_jsonl_lenient::<Sample>(input)? {
        match record {
            Ok(s) => samples.push(s),
            Err(e) => unreadable.push((format!("line {line}"), e.to_string())),
        }
    }
    let result = filter_samples(samples, unreadable, backend, manifest, config, parallelism);
    io::write_jsonl(&outputs.kept, &result.kept)?;
    io::write_jsonl(&outputs.rejected, &result.rejected)?;
    io::write_json_pretty(&outputs.summary, &result.summary)?;
    Ok(result.summary)
}
