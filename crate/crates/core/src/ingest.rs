//! Source-dataset ingestion, corpus manifests and training-mixture recipes.
//!
//! Four line-delimited source schemas are understood. Pixel coordinates in
//! region records are normalized by the image size and rounded to the
//! three-decimal grid.
//!
//! | format             | fields                                                         |
//! |--------------------|----------------------------------------------------------------|
//! | `caption-records`  | `image`, `caption`                                             |
//! | `vqa-records`      | `image`, `question`, `answer`                                  |
//! | `region-records`   | `image`, `width`, `height`, then either `expression` + `box`   |
//! |                    | (REC/REG) or `question` + `answer` with `<boxN>` / `<pointN>`  |
//! |                    | placeholders resolved from `boxes` / `points`                  |
//! | `dialogue-records` | `image`, `turns: [{question, answer}]`                         |
//!
//! Every record may carry an `id`; otherwise `{source_id}-{index:06}` is used.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::exec;
use crate::rng::{derive_seed, SplitMix64};
use crate::schema::{
    round3, serialize_box, serialize_point, validate_sample, CorpusManifest, ManifestEntry, Point, Provenance,
    RegionBox, Sample, TaskType, Turn,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    CaptionRecords,
    VqaRecords,
    RegionRecords,
    DialogueRecords,
}

impl SourceFormat {
    pub fn compatible_with(self, task: TaskType) -> bool {
        match self {
            SourceFormat::RegionRecords => task.is_region(),
            SourceFormat::CaptionRecords => !task.is_region(),
            SourceFormat::VqaRecords | SourceFormat::DialogueRecords => true,
        }
    }
}

impl std::str::FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown source format `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub id: String,
    pub format: SourceFormat,
    pub path: PathBuf,
    pub task: TaskType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_limit: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format {format:?} cannot produce {task} samples")]
    IncompatibleTask { format: SourceFormat, task: TaskType },
    #[error("record {index}: does not match {format:?}: {detail}")]
    FormatMismatch {
        index: usize,
        format: SourceFormat,
        detail: String,
    },
    #[error("record {index}: image dimensions required to normalize pixel coordinates")]
    MissingImageDimensions { index: usize },
    #[error("unknown recipe `{0}` (expected genixer_i, genixer_s or kakapo)")]
    UnknownRecipe(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionRecord {
    id: Option<String>,
    image: String,
    caption: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VqaRecord {
    id: Option<String>,
    image: String,
    question: String,
    answer: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionRecord {
    id: Option<String>,
    image: String,
    width: Option<u32>,
    height: Option<u32>,
    expression: Option<String>,
    #[serde(rename = "box")]
    bbox: Option<[f64; 4]>,
    question: Option<String>,
    answer: Option<String>,
    #[serde(default)]
    boxes: Vec<[f64; 4]>,
    #[serde(default)]
    points: Vec<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DialogueRecord {
    id: Option<String>,
    image: String,
    turns: Vec<Turn>,
}

const CAPTION_QUESTION: &str = "Describe the image briefly.";

const REC_QUESTIONS: [&str; 3] = [
    "I need the coordinates of {expr}. Can you assist?",
    "I'd like to request the coordinates of {expr} within the photo.",
    "Where is {expr} in the image? Answer with a bounding box.",
];

const REG_QUESTIONS: [&str; 2] = [
    "What are the unique aspects of the selected rectangular area {box} in image?",
    "Describe the region {box} in the image.",
];

fn pick<'a>(options: &[&'a str], key: &str) -> &'a str {
    options[(derive_seed(&[key]) % options.len() as u64) as usize]
}

/// Normalizes a pixel box `[left, top, right, bottom]` by the image size.
pub fn normalize_pixel_box(px: [f64; 4], width: u32, height: u32) -> RegionBox {
    let (w, h) = (width as f64, height as f64);
    RegionBox {
        x1: round3(px[0] / w),
        y1: round3(px[1] / h),
        x2: round3(px[2] / w),
        y2: round3(px[3] / h),
    }
}

/// Streaming reader over one source file.
pub struct SourceReader {
    spec: SourceSpec,
    lines: Lines<BufReader<File>>,
    index: usize,
    emitted: usize,
    failed: bool,
}

impl SourceReader {
    pub fn open(spec: SourceSpec) -> Result<Self, IngestError> {
        if !spec.format.compatible_with(spec.task) {
            return Err(IngestError::IncompatibleTask {
                format: spec.format,
                task: spec.task,
            });
        }
        let file = File::open(&spec.path).map_err(|source| IngestError::Io {
            path: spec.path.clone(),
            source,
        })?;
        Ok(SourceReader {
            spec,
            lines: BufReader::new(file).lines(),
            index: 0,
            emitted: 0,
            failed: false,
        })
    }

    fn mismatch(&self, detail: impl Into<String>) -> IngestError {
        IngestError::FormatMismatch {
            index: self.index,
            format: self.spec.format,
            detail: detail.into(),
        }
    }

    fn record<T: for<'de> Deserialize<'de>>(&self, line: &str) -> Result<T, IngestError> {
        serde_json::from_str(line).map_err(|e| self.mismatch(e.to_string()))
    }

    fn convert(&self, line: &str) -> Result<Sample, IngestError> {
        let task = self.spec.task;
        let (id, image, turns) = match self.spec.format {
            SourceFormat::CaptionRecords => {
                let r: CaptionRecord = self.record(line)?;
                if r.caption.trim().is_empty() {
                    return Err(self.mismatch("empty caption"));
                }
                (r.id, r.image, vec![Turn::new(CAPTION_QUESTION, r.caption.trim())])
            }
            SourceFormat::VqaRecords => {
                let r: VqaRecord = self.record(line)?;
                (r.id, r.image, vec![Turn::new(r.question.trim(), r.answer.trim())])
            }
            SourceFormat::DialogueRecords => {
                let r: DialogueRecord = self.record(line)?;
                let turns = r
                    .turns
                    .into_iter()
                    .map(|t| Turn::new(t.question.trim(), t.answer.trim()))
                    .collect();
                (r.id, r.image, turns)
            }
            SourceFormat::RegionRecords => {
                let r: RegionRecord = self.record(line)?;
                let turn = self.region_turn(&r)?;
                (r.id, r.image, vec![turn])
            }
        };
        let id = id.unwrap_or_else(|| format!("{}-{:06}", self.spec.id, self.index));
        let sample = Sample {
            id,
            image_ref: image,
            task,
            turns,
            provenance: Provenance::Ingested,
            generator_meta: None,
        };
        let violations = validate_sample(&sample);
        if let Some(v) = violations.first() {
            return Err(self.mismatch(format!("{:?}: {}", v.code, v.detail)));
        }
        Ok(sample)
    }

    fn region_turn(&self, r: &RegionRecord) -> Result<Turn, IngestError> {
        let (Some(width), Some(height)) = (r.width, r.height) else {
            return Err(IngestError::MissingImageDimensions { index: self.index });
        };
        if width == 0 || height == 0 {
            return Err(IngestError::MissingImageDimensions { index: self.index });
        }
        let norm = |px: [f64; 4]| {
            let b = normalize_pixel_box(px, width, height);
            b.validate()
                .map(|_| b)
                .map_err(|e| self.mismatch(format!("box {px:?}: {e}")))
        };
        let key = format!("{}#{}", self.spec.id, self.index);
        match (self.spec.task, &r.expression, r.bbox) {
            (TaskType::Rec, Some(expr), Some(px)) => {
                let b = norm(px)?;
                let q = pick(&REC_QUESTIONS, &key).replace("{expr}", expr.trim());
                Ok(Turn::new(q, serialize_box(&b)))
            }
            (TaskType::Reg, Some(expr), Some(px)) => {
                let b = norm(px)?;
                let q = pick(&REG_QUESTIONS, &key).replace("{box}", &serialize_box(&b));
                Ok(Turn::new(q, expr.trim()))
            }
            _ => {
                let (Some(q), Some(a)) = (&r.question, &r.answer) else {
                    return Err(self.mismatch("expected `expression` + `box` (REC/REG) or `question` + `answer`"));
                };
                let mut subst = Vec::new();
                for (i, px) in r.boxes.iter().enumerate() {
                    subst.push((format!("<box{i}>"), serialize_box(&norm(*px)?)));
                }
                for (i, [x, y]) in r.points.iter().enumerate() {
                    let p = Point::new(round3(x / width as f64), round3(y / height as f64))
                        .map_err(|e| self.mismatch(format!("point {i}: {e}")))?;
                    subst.push((format!("<point{i}>"), serialize_point(&p)));
                }
                let fill = |text: &str| {
                    subst
                        .iter()
                        .fold(text.trim().to_string(), |acc, (k, v)| acc.replace(k, v))
                };
                Ok(Turn::new(fill(q), fill(a)))
            }
        }
    }
}

impl Iterator for SourceReader {
    type Item = Result<Sample, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.spec.sample_limit.is_some_and(|n| self.emitted >= n) {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(source) => {
                    self.failed = true;
                    return Some(Err(IngestError::Io {
                        path: self.spec.path.clone(),
                        source,
                    }));
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let result = self.convert(&line);
            self.index += 1;
            match &result {
                Ok(_) => self.emitted += 1,
                Err(_) => self.failed = true,
            }
            return Some(result);
        }
    }
}

/// Reads a whole source; fails on the first offending record.
pub fn ingest_source(spec: &SourceSpec) -> Result<Vec<Sample>, IngestError> {
    SourceReader::open(spec.clone())?.collect()
}

/// Ingests independent sources in parallel; results are in input order.
pub fn ingest_sources(specs: &[SourceSpec], parallelism: usize) -> Vec<Result<Vec<Sample>, IngestError>> {
    exec::map_ordered(specs, parallelism, ingest_source)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestReport {
    pub manifest: CorpusManifest,
    pub skipped: Vec<SkippedImage>,
}

/// Scans `image_dir` recursively and records the true size of every image
/// that decodes. Undecodable files go to the skip report. Entries are
/// ordered by relative path.
pub fn build_manifest(image_dir: &Path, source_tag: &str, parallelism: usize) -> Result<ManifestReport, IngestError> {
    let io_err = |source: std::io::Error| IngestError::Io {
        path: image_dir.to_path_buf(),
        source,
    };
    if !image_dir.is_dir() {
        return Err(io_err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "not a directory",
        )));
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(image_dir).sort_by_file_name() {
        let entry = entry.map_err(|e| io_err(e.into()))?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if entry.file_type().is_file() && !hidden {
            files.push(entry.into_path());
        }
    }
    let rel = |p: &Path| {
        p.strip_prefix(image_dir)
            .unwrap_or(p)
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    };
    let mut files: Vec<(String, PathBuf)> = files.into_iter().map(|p| (rel(&p), p)).collect();
    files.sort();

    let decoded = exec::map_ordered(&files, parallelism, |(r, p)| {
        image::open(p)
            .map(|img| (r.clone(), img.width(), img.height()))
            .map_err(|e| SkippedImage {
                path: r.clone(),
                reason: e.to_string(),
            })
    });
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for d in decoded {
        match d {
            Ok((image_ref, width, height)) => entries.push(ManifestEntry {
                image_ref,
                width,
                height,
                source: source_tag.to_string(),
            }),
            Err(s) => skipped.push(s),
        }
    }
    let name = image_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| source_tag.to_string());
    Ok(ManifestReport {
        manifest: CorpusManifest::new(name, entries),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeSource {
    pub source_id: String,
    /// Dataset names as published for this mixture slot.
    pub datasets: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskType>,
    /// Data category label (e.g. "Image Captioning").
    pub kind: String,
    pub declared_size: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipePhase {
    pub name: String,
    pub sources: Vec<RecipeSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub name: String,
    pub phases: Vec<RecipePhase>,
    pub notes: Vec<String>,
}

impl Recipe {
    pub fn total_declared(&self) -> u64 {
        self.phases
            .iter()
            .flat_map(|p| &p.sources)
            .map(|s| s.declared_size)
            .sum()
    }

    /// `(phase, source_id, declared_size)` rows.
    pub fn rows(&self) -> Vec<(String, String, u64)> {
        self.phases
            .iter()
            .flat_map(|p| {
                p.sources
                    .iter()
                    .map(|s| (p.name.clone(), s.source_id.clone(), s.declared_size))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecipeOptions {
    /// Fraction of the phase-1 REC/REG sizes kept in the second region phase.
    pub region_phase2_factor: f64,
}

impl Default for RecipeOptions {
    fn default() -> Self {
        RecipeOptions {
            region_phase2_factor: 0.25,
        }
    }
}

const K: u64 = 1_000;

fn src(id: &str, datasets: &str, task: Option<TaskType>, kind: &str, size: u64) -> RecipeSource {
    RecipeSource {
        source_id: id.to_string(),
        datasets: datasets.to_string(),
        task,
        kind: kind.to_string(),
        declared_size: size,
        note: None,
    }
}

pub fn build_recipe(name: &str) -> Result<Recipe, IngestError> {
    build_recipe_with(name, RecipeOptions::default())
}

pub fn build_recipe_with(name: &str, options: RecipeOptions) -> Result<Recipe, IngestError> {
    use TaskType::*;
    let recipe = match name {
        "genixer_i" => Recipe {
            name: name.into(),
            phases: vec![
                RecipePhase {
                    name: "phase1".into(),
                    sources: vec![
                        RecipeSource {
                            note: Some("Counting110K is a manually collected PointQA subset".into()),
                            ..src(
                                "common_vqa",
                                "VQAv2, GQA, Counting110K",
                                Some(CommonVqa),
                                "Nonregion",
                                420 * K,
                            )
                        },
                        src("adv_vqa", "POPE", Some(AdvVqa), "Nonregion", 30 * K),
                    ],
                },
                RecipePhase {
                    name: "phase2".into(),
                    sources: vec![
                        src("rc_vqa", "OCRVQA, TextVQA", Some(RcVqa), "Nonregion", 80 * K),
                        src("cot_vqa", "GQA", Some(CotVqa), "Nonregion", 90 * K),
                        src("md", "LLaVA-150K", Some(Md), "Nonregion", 150 * K),
                    ],
                },
            ],
            notes: vec!["phase2 continues from the phase1 generator".into()],
        },
        "genixer_s" => {
            let reduced = |size: u64| (size as f64 * options.region_phase2_factor).round() as u64;
            Recipe {
                name: name.into(),
                phases: vec![
                    RecipePhase {
                        name: "phase1".into(),
                        sources: vec![
                            src("rec", "VG, RefCOCO", Some(Rec), "Image-region", 1_000 * K),
                            src("reg", "VG, RefCOCO", Some(Reg), "Image-region", 1_000 * K),
                        ],
                    },
                    RecipePhase {
                        name: "phase2".into(),
                        sources: vec![
                            src(
                                "point_qa",
                                "PointQA Local, Visual7W",
                                Some(PointQa),
                                "Image-region",
                                218 * K,
                            ),
                            src(
                                "qcbox_a",
                                "Shikra (GPT-4 Generated)",
                                Some(QcBoxA),
                                "Image-region",
                                4 * K,
                            ),
                            src("rd", "Shikra (GPT-4 Generated)", Some(Rd), "Image-region", 1_800),
                            RecipeSource {
                                note: Some(format!("reduced to {} of phase1", options.region_phase2_factor)),
                                ..src(
                                    "rec_reduced",
                                    "VG, RefCOCO",
                                    Some(Rec),
                                    "Image-region",
                                    reduced(1_000 * K),
                                )
                            },
                            RecipeSource {
                                note: Some(format!("reduced to {} of phase1", options.region_phase2_factor)),
                                ..src(
                                    "reg_reduced",
                                    "VG, RefCOCO",
                                    Some(Reg),
                                    "Image-region",
                                    reduced(1_000 * K),
                                )
                            },
                        ],
                    },
                ],
                notes: vec![format!(
                    "phase2 REC/REG reduction factor {} is a configurable default, not a published value",
                    options.region_phase2_factor
                )],
            }
        }
        "kakapo" => Recipe {
            name: name.into(),
            phases: vec![RecipePhase {
                name: "train".into(),
                sources: vec![
                    src("llava_cc3m", "LLaVA-CC3M", None, "Image Captioning", 595 * K),
                    src("llava_lcs", "LLaVA-LCS", None, "Image Captioning", 585 * K),
                    src("ptp_4m", "PTP-4M", None, "Image Captioning", 720 * K),
                    src("vqav2", "VQAv2", Some(CommonVqa), "VQA", 443 * K),
                    src("refcoco", "RefCOCO", Some(Rec), "Image-region based VQA", 280 * K),
                    src(
                        "visual_genome",
                        "Visual Genome",
                        Some(Rec),
                        "Image-region based VQA",
                        90 * K,
                    ),
                    src(
                        "llava_instruct_150k",
                        "LLaVA-Instruct-150K",
                        Some(Md),
                        "Multi-turn Dialogue",
                        150 * K,
                    ),
                ],
            }],
            notes: vec![],
        },
        other => return Err(IngestError::UnknownRecipe(other.to_string())),
    };
    Ok(recipe)
}

/// Draws each bound source down to `ceil(declared_size * scale)` samples
/// with a seeded shuffle; sources smaller than the target are taken whole.
/// Returns samples grouped by phase name.
pub fn materialize_recipe(
    recipe: &Recipe,
    bindings: &BTreeMap<String, SourceSpec>,
    scale: f64,
    seed: u64,
    parallelism: usize,
) -> Result<BTreeMap<String, Vec<Sample>>, IngestError> {
    let mut out = BTreeMap::new();
    for phase in &recipe.phases {
        let bound: Vec<(&RecipeSource, &SourceSpec)> = phase
            .sources
            .iter()
            .filter_map(|s| bindings.get(&s.source_id).map(|spec| (s, spec)))
            .collect();
        let specs: Vec<SourceSpec> = bound.iter().map(|(_, spec)| (*spec).clone()).collect();
        let mut samples = Vec::new();
        for ((source, _), result) in bound.iter().zip(ingest_sources(&specs, parallelism)) {
            let mut items = result?;
            let target = ((source.declared_size as f64 * scale).ceil() as usize).min(items.len());
            let mut rng = SplitMix64::new(seed ^ derive_seed(&[&recipe.name, &phase.name, &source.source_id]));
            rng.partial_shuffle(&mut items, target);
            items.truncate(target);
            samples.extend(items);
        }
        out.insert(phase.name.clone(), samples);
    }
    Ok(out)
}
