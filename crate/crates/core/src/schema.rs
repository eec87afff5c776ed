//! Canonical record types, coordinate conventions and validation.
//!
//! Regions are normalized `[x1,y1,x2,y2]` boxes: fractions of image width and
//! height, top-left then bottom-right corner, printed with exactly three
//! decimals. Boxes live inline in question/answer text; [`crate::parser`]
//! recovers them as spans.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::io::{self, RecordError};
use crate::parser::{self, LiteralKind};

/// The ten instruction-data task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskType {
    #[serde(rename = "common_vqa")]
    CommonVqa,
    #[serde(rename = "adv_vqa")]
    AdvVqa,
    #[serde(rename = "rc_vqa")]
    RcVqa,
    #[serde(rename = "cot_vqa")]
    CotVqa,
    #[serde(rename = "md")]
    Md,
    #[serde(rename = "rec")]
    Rec,
    #[serde(rename = "reg")]
    Reg,
    #[serde(rename = "point_qa")]
    PointQa,
    #[serde(rename = "qcbox_a")]
    QcBoxA,
    #[serde(rename = "rd")]
    Rd,
}

impl TaskType {
    pub const ALL: [TaskType; 10] = [
        TaskType::CommonVqa,
        TaskType::AdvVqa,
        TaskType::RcVqa,
        TaskType::CotVqa,
        TaskType::Md,
        TaskType::Rec,
        TaskType::Reg,
        TaskType::PointQa,
        TaskType::QcBoxA,
        TaskType::Rd,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            TaskType::CommonVqa => "Common VQA",
            TaskType::AdvVqa => "Adv VQA",
            TaskType::RcVqa => "RC VQA",
            TaskType::CotVqa => "CoT VQA",
            TaskType::Md => "MD",
            TaskType::Rec => "REC",
            TaskType::Reg => "REG",
            TaskType::PointQa => "PointQA",
            TaskType::QcBoxA => "Q→C^Box A",
            TaskType::Rd => "RD",
        }
    }

    /// Stable ASCII identifier used in record files and on the command line.
    pub fn key(self) -> &'static str {
        match self {
            TaskType::CommonVqa => "common_vqa",
            TaskType::AdvVqa => "adv_vqa",
            TaskType::RcVqa => "rc_vqa",
            TaskType::CotVqa => "cot_vqa",
            TaskType::Md => "md",
            TaskType::Rec => "rec",
            TaskType::Reg => "reg",
            TaskType::PointQa => "point_qa",
            TaskType::QcBoxA => "qcbox_a",
            TaskType::Rd => "rd",
        }
    }

    pub fn is_region(self) -> bool {
        matches!(
            self,
            TaskType::Rec | TaskType::Reg | TaskType::PointQa | TaskType::QcBoxA | TaskType::Rd
        )
    }

    pub fn allows_multi_turn(self) -> bool {
        self == TaskType::Md
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown task type `{0}`")]
pub struct UnknownTask(pub String);

impl FromStr for TaskType {
    type Err = UnknownTask;

    /// Accepts the key (`common_vqa`), the display name (`Common VQA`) or the
    /// variant name (`CommonVqa`), case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim();
        let squash = |v: &str| {
            v.chars()
                .filter(|c| c.is_ascii_alphanumeric())
                .collect::<String>()
                .to_ascii_lowercase()
        };
        let wanted_squashed = squash(wanted);
        TaskType::ALL
            .into_iter()
            .find(|t| {
                t.key().eq_ignore_ascii_case(wanted)
                    || t.display_name().eq_ignore_ascii_case(wanted)
                    || squash(t.key()) == wanted_squashed
                    || squash(t.display_name()) == wanted_squashed
                    || squash(&format!("{t:?}")) == wanted_squashed
            })
            .ok_or_else(|| UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum BoxError {
    #[error("coordinate outside [0, 1]")]
    OutOfRange,
    #[error("box has zero or negative extent")]
    Degenerate,
    #[error("coordinate is not a finite number")]
    NonFinite,
}

/// Normalized axis-aligned box, `0 <= x1 < x2 <= 1` and `0 <= y1 < y2 <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl RegionBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, BoxError> {
        let b = RegionBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), BoxError> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(BoxError::NonFinite);
        }
        if coords.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(BoxError::OutOfRange);
        }
        if self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(BoxError::Degenerate);
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    /// The box with every coordinate rounded to the three-decimal grid. An
    /// axis narrower than one grid step that would collapse is widened by
    /// one step, so a valid box stays valid.
    pub fn quantized(&self) -> RegionBox {
        fn axis(lo: f64, hi: f64) -> (f64, f64) {
            let (mut a, mut b) = (thousandths(lo), thousandths(hi));
            if a >= b {
                if a < 1000 {
                    b = a + 1;
                } else {
                    a = b - 1;
                }
            }
            (a as f64 / 1000.0, b as f64 / 1000.0)
        }
        let (x1, x2) = axis(self.x1, self.x2);
        let (y1, y2) = axis(self.y1, self.y2);
        RegionBox { x1, y1, x2, y2 }
    }

    pub fn max_abs_diff(&self, other: &RegionBox) -> f64 {
        [
            self.x1 - other.x1,
            self.y1 - other.y1,
            self.x2 - other.x2,
            self.y2 - other.y2,
        ]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()))
    }
}

impl fmt::Display for RegionBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_box(self))
    }
}

/// Normalized point, both coordinates in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Result<Self, BoxError> {
        let p = Point { x, y };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), BoxError> {
        if !self.x.is_finite() || !self.y.is_finite() {
            return Err(BoxError::NonFinite);
        }
        if !(0.0..=1.0).contains(&self.x) || !(0.0..=1.0).contains(&self.y) {
            return Err(BoxError::OutOfRange);
        }
        Ok(())
    }
}

/// Thousandths of `v`, rounded half-up. The small bias absorbs binary
/// representation error so that e.g. 0.1235 rounds to 124.
fn thousandths(v: f64) -> i64 {
    (v * 1000.0 + 0.5 + 1e-9).floor() as i64
}

pub fn round3(v: f64) -> f64 {
    thousandths(v) as f64 / 1000.0
}

fn fmt3(v: f64) -> String {
    let t = thousandths(v);
    let sign = if t < 0 { "-" } else { "" };
    let t = t.abs();
    format!("{sign}{}.{:03}", t / 1000, t % 1000)
}

/// `[x1,y1,x2,y2]` with three decimals and no spaces.
pub fn serialize_box(b: &RegionBox) -> String {
    let b = b.quantized();
    format!("[{},{},{},{}]", fmt3(b.x1), fmt3(b.y1), fmt3(b.x2), fmt3(b.y2))
}

pub fn serialize_point(p: &Point) -> String {
    format!("[{},{}]", fmt3(p.x), fmt3(p.y))
}

/// Parses a single bracketed box literal such as `[0.1, 0.2, 0.3, 0.4]`.
pub fn parse_box(text: &str) -> Result<RegionBox, BoxParseError> {
    let text = text.trim();
    match parser::scan_literals(text).as_slice() {
        [lit] if lit.start == 0 && lit.end == text.len() => match &lit.kind {
            LiteralKind::Numbers(v) if v.len() == 4 => {
                RegionBox::new(v[0], v[1], v[2], v[3]).map_err(BoxParseError::Invalid)
            }
            _ => Err(BoxParseError::Malformed),
        },
        _ => Err(BoxParseError::Malformed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum BoxParseError {
    #[error("not a four-number bracketed literal")]
    Malformed,
    #[error(transparent)]
    Invalid(BoxError),
}

/// Integer pixel rectangle, half-open: `left..right`, `top..bottom`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.right - self.left
    }

    pub fn height(&self) -> u32 {
        self.bottom - self.top
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Pixel rectangle covering `b`: minimum edges floored, maximum edges
/// ceiled, so the crop never loses referenced content. The result is
/// always non-empty and inside the image.
pub fn box_to_pixels(b: &RegionBox, width: u32, height: u32) -> PixelRect {
    fn axis(lo: f64, hi: f64, extent: u32) -> (u32, u32) {
        let extent = extent.max(1);
        let size = extent as f64;
        let mut start = (snap(lo * size).floor().max(0.0) as u32).min(extent - 1);
        let end = (snap(hi * size).ceil().max(0.0) as u32).min(extent);
        let end = end.max(start + 1);
        if end > extent {
            start = extent - 1;
        }
        (start, end.min(extent))
    }
    let (left, right) = axis(b.x1, b.x2, width);
    let (top, bottom) = axis(b.y1, b.y2, height);
    PixelRect {
        left,
        top,
        right,
        bottom,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub question: String,
    pub answer: String,
}

impl Turn {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Turn {
            question: question.into(),
            answer: answer.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Ingested,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub backend: String,
    pub prompt_id: String,
    pub seed: u64,
}

/// One instruction-tuning record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    #[serde(rename = "image")]
    pub image_ref: String,
    pub task: TaskType,
    pub turns: Vec<Turn>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_meta: Option<GeneratorMeta>,
}

impl Sample {
    /// Same sample with every embedded coordinate literal rewritten to the
    /// canonical three-decimal form.
    pub fn canonicalized(&self) -> Sample {
        let mut out = self.clone();
        for turn in &mut out.turns {
            turn.question = parser::canonicalize_text(&turn.question, self.task);
            turn.answer = parser::canonicalize_text(&turn.answer, self.task);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationCode {
    EmptyId,
    EmptyImageRef,
    NoTurns,
    TurnCountMismatch,
    EmptyField,
    UntrimmedText,
    EmbeddedMarker,
    MalformedBox,
    OutOfRangeCoordinate,
    DegenerateBox,
    MissingRegion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
    pub detail: String,
}

impl Violation {
    fn new(code: ViolationCode, turn: Option<usize>, detail: impl Into<String>) -> Self {
        Violation {
            code,
            turn,
            detail: detail.into(),
        }
    }
}

const MARKERS: [&str; 2] = ["Question:", "Answer:"];

/// Every invariant violation of `s`; empty iff the sample is valid.
pub fn validate_sample(s: &Sample) -> Vec<Violation> {
    use ViolationCode::*;
    let mut out = Vec::new();
    if s.id.trim().is_empty() {
        out.push(Violation::new(EmptyId, None, "sample id is empty"));
    }
    if s.image_ref.trim().is_empty() {
        out.push(Violation::new(EmptyImageRef, None, "image reference is empty"));
    }
    if s.turns.is_empty() {
        out.push(Violation::new(NoTurns, None, "sample has no turns"));
    } else if !s.task.allows_multi_turn() && s.turns.len() != 1 {
        out.push(Violation::new(
            TurnCountMismatch,
            None,
            format!("{} requires exactly 1 turn, found {}", s.task, s.turns.len()),
        ));
    }

    for (idx, turn) in s.turns.iter().enumerate() {
        let t = Some(idx);
        for (field, text) in [("question", &turn.question), ("answer", &turn.answer)] {
            if text.trim().is_empty() {
                out.push(Violation::new(EmptyField, t, format!("{field} is empty")));
                continue;
            }
            if text.trim() != text.as_str() {
                out.push(Violation::new(
                    UntrimmedText,
                    t,
                    format!("{field} has surrounding whitespace"),
                ));
            }
            if let Some(m) = MARKERS.iter().find(|m| text.contains(**m)) {
                out.push(Violation::new(
                    EmbeddedMarker,
                    t,
                    format!("{field} contains the marker `{m}`"),
                ));
            }
            for lit in parser::scan_literals(text) {
                let code = match lit.kind {
                    LiteralKind::Malformed => Some(MalformedBox),
                    LiteralKind::Numbers(ref v) if v.len() == 4 => match RegionBox::new(v[0], v[1], v[2], v[3]) {
                        Ok(_) => None,
                        Err(BoxError::Degenerate) => Some(DegenerateBox),
                        Err(_) => Some(OutOfRangeCoordinate),
                    },
                    LiteralKind::Numbers(ref v) if v.len() == 2 => {
                        if s.task == TaskType::PointQa && Point::new(v[0], v[1]).is_err() {
                            Some(OutOfRangeCoordinate)
                        } else {
                            None
                        }
                    }
                    LiteralKind::Numbers(_) => None,
                };
                if let Some(code) = code {
                    out.push(Violation::new(
                        code,
                        t,
                        format!("{field} literal `{}`", &text[lit.start..lit.end]),
                    ));
                }
            }
        }
    }

    if let Some(detail) = missing_region(s) {
        out.push(Violation::new(MissingRegion, Some(0), detail));
    }
    if let (TaskType::Reg, Some(first)) = (s.task, s.turns.first()) {
        if !first.answer.trim().is_empty() && !parser::has_prose(&first.answer) {
            out.push(Violation::new(
                EmptyField,
                Some(0),
                "REG answer has no textual description",
            ));
        }
    }
    out
}

fn missing_region(s: &Sample) -> Option<&'static str> {
    let first = s.turns.first()?;
    let has_box = |text: &str| !parser::valid_boxes(text).is_empty();
    match s.task {
        TaskType::Rec if !has_box(&first.answer) => Some("REC answer has no box"),
        TaskType::Reg if !has_box(&first.question) => Some("REG question has no box"),
        TaskType::PointQa if !has_box(&first.question) && parser::valid_points(&first.question).is_empty() => {
            Some("PointQA question has neither a point nor a box")
        }
        _ => None,
    }
}

/// One image of a generation corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(rename = "image")]
    pub image_ref: String,
    pub width: u32,
    pub height: u32,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestHeader {
    name: String,
    declared_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub name: String,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("manifest is empty: missing header line")]
    MissingHeader,
    #[error("duplicate image `{0}`")]
    DuplicateImage(String),
    #[error("image `{0}` has zero width or height")]
    ZeroDimension(String),
    #[error("declared count {declared} but {actual} entries")]
    CountMismatch { declared: usize, actual: usize },
}

impl CorpusManifest {
    pub fn new(name: impl Into<String>, entries: Vec<ManifestEntry>) -> Self {
        CorpusManifest {
            name: name.into(),
            entries,
        }
    }

    pub fn declared_count(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, image_ref: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.image_ref == image_ref)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.image_ref.as_str()) {
                return Err(ManifestError::DuplicateImage(e.image_ref.clone()));
            }
            if e.width == 0 || e.height == 0 {
                return Err(ManifestError::ZeroDimension(e.image_ref.clone()));
            }
        }
        Ok(())
    }

    /// Header object on the first line, then one entry per line.
    pub fn save(&self, path: &Path) -> Result<(), RecordError> {
        let header = ManifestHeader {
            name: self.name.clone(),
            declared_count: self.entries.len(),
        };
        let mut lines = vec![serde_json::to_value(&header).expect("header serializes")];
        lines.extend(
            self.entries
                .iter()
                .map(|e| serde_json::to_value(e).expect("entry serializes")),
        );
        io::write_jsonl(path, &lines)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let lines = io::read_lines(path)?;
        let parse_err = |line: usize, source| RecordError::Parse {
            path: path.to_path_buf(),
            line,
            source,
        };
        let mut iter = lines.into_iter();
        let (hline, htext) = iter.next().ok_or(ManifestError::MissingHeader)?;
        let header: ManifestHeader = serde_json::from_str(&htext).map_err(|e| parse_err(hline, e))?;
        let entries = iter
            .map(|(line, text)| serde_json::from_str(&text).map_err(|e| parse_err(line, e)))
            .collect::<Result<Vec<ManifestEntry>, _>>()?;
        if header.declared_count != entries.len() {
            return Err(ManifestError::CountMismatch {
                declared: header.declared_count,
                actual: entries.len(),
            });
        }
        let manifest = CorpusManifest {
            name: header.name,
            entries,
        };
        manifest.validate()?;
        Ok(manifest)
    }
}
