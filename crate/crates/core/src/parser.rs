//! Parser for generator output in the `Question: ... Answer: ...` family,
//! and for normalized coordinate literals embedded in text.
//!
//! Grammar: optional whitespace, then one or more blocks of
//! `Question:` text `Answer:` text. Multi-turn dialogue (MD) takes any number
//! of blocks; every other task takes exactly one. Markers are case-sensitive
//! unless [`ParseOptions::lenient`] is set.
//!
//! Coordinate literals are bracketed comma-separated numbers whose first
//! character after `[` (and optional spaces) is a digit or `-`. Four numbers
//! form a box, two numbers a point (meaningful for PointQA only), one number
//! is treated as prose (citation-style `[1]`). Any other count, or a
//! component that is not a plain decimal number, is malformed. Brackets with
//! other content are prose and ignored.

use serde::{Deserialize, Serialize};

use crate::schema::{serialize_box, serialize_point, BoxError, Point, Provenance, RegionBox, Sample, TaskType, Turn};

const QUESTION: &str = "Question:";
const ANSWER: &str = "Answer:";

#[derive(Debug, Clone, PartialEq)]
pub enum LiteralKind {
    Numbers(Vec<f64>),
    Malformed,
}

/// A bracketed numeric literal at byte offsets `start..end` (brackets included).
#[derive(Debug, Clone, PartialEq)]
pub struct Literal {
    pub start: usize,
    pub end: usize,
    pub kind: LiteralKind,
}

fn is_plain_number(s: &str) -> bool {
    let s = s.strip_prefix('-').unwrap_or(s);
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (s, None),
    };
    !int.is_empty()
        && int.bytes().all(|b| b.is_ascii_digit())
        && frac.is_none_or(|f| !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()))
}

/// All bracketed numeric literals in `text`, left to right.
pub fn scan_literals(text: &str) -> Vec<Literal> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'[' {
            i += 1;
            continue;
        }
        let start = i;
        let mut j = i + 1;
        while j < bytes.len() && bytes[j] == b' ' {
            j += 1;
        }
        if j >= bytes.len() || !(bytes[j].is_ascii_digit() || bytes[j] == b'-') {
            i += 1;
            continue;
        }
        let mut k = j;
        while k < bytes.len() && (bytes[k].is_ascii_digit() || matches!(bytes[k], b'.' | b',' | b'-' | b' ' | b'\t')) {
            k += 1;
        }
        if k >= bytes.len() || bytes[k] != b']' {
            // unterminated, or other characters inside: prose
            i += 1;
            continue;
        }
        let inner = &text[start + 1..k];
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        let kind = if parts.iter().all(|p| is_plain_number(p)) && matches!(parts.len(), 1 | 2 | 4) {
            LiteralKind::Numbers(
                parts
                    .iter()
                    .map(|p| p.parse::<f64>().expect("checked numeric"))
                    .collect(),
            )
        } else {
            LiteralKind::Malformed
        };
        out.push(Literal {
            start,
            end: k + 1,
            kind,
        });
        i = k + 1;
    }
    out
}

/// A box literal and its byte offsets in the enclosing text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpan {
    #[serde(rename = "box")]
    pub region: RegionBox,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSpan {
    pub point: Point,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParseErrorCode {
    MissingQuestionMarker,
    MissingAnswerMarker,
    MalformedBox,
    OutOfRangeCoordinate,
    DegenerateBox,
    EmptyField,
    TurnStructureError,
    /// The task requires a region (box, or point for PointQA) that is absent.
    MissingRegion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code:?} at byte {offset}: {detail}")]
pub struct ParseError {
    pub code: ParseErrorCode,
    pub offset: usize,
    pub detail: String,
}

impl ParseError {
    fn new(code: ParseErrorCode, offset: usize, detail: impl Into<String>) -> Self {
        ParseError {
            code,
            offset,
            detail: detail.into(),
        }
    }

    fn shifted(mut self, by: usize) -> Self {
        self.offset += by;
        self
    }
}

pub type ParseOutcome = Result<Sample, ParseError>;

fn box_error_code(e: BoxError) -> ParseErrorCode {
    match e {
        BoxError::Degenerate => ParseErrorCode::DegenerateBox,
        BoxError::OutOfRange | BoxError::NonFinite => ParseErrorCode::OutOfRangeCoordinate,
    }
}

/// Every box literal in `text`. The first malformed or invalid literal is
/// an error; two-number and one-number literals are skipped.
pub fn parse_box_spans(text: &str) -> Result<Vec<BoxSpan>, ParseError> {
    let mut spans = Vec::new();
    for lit in scan_literals(text) {
        let literal = &text[lit.start..lit.end];
        match lit.kind {
            LiteralKind::Malformed => {
                return Err(ParseError::new(
                    ParseErrorCode::MalformedBox,
                    lit.start,
                    format!("malformed coordinate literal `{literal}`"),
                ))
            }
            LiteralKind::Numbers(v) if v.len() == 4 => {
                let region = RegionBox::new(v[0], v[1], v[2], v[3])
                    .map_err(|e| ParseError::new(box_error_code(e), lit.start, format!("`{literal}`: {e}")))?;
                spans.push(BoxSpan {
                    region,
                    char_start: lit.start,
                    char_end: lit.end,
                });
            }
            LiteralKind::Numbers(_) => {}
        }
    }
    Ok(spans)
}

/// Two-number literals of `text`, validated as points.
pub fn parse_point_spans(text: &str) -> Result<Vec<PointSpan>, ParseError> {
    let mut spans = Vec::new();
    for lit in scan_literals(text) {
        if let LiteralKind::Numbers(v) = &lit.kind {
            if v.len() == 2 {
                let point = Point::new(v[0], v[1]).map_err(|e| {
                    ParseError::new(
                        box_error_code(e),
                        lit.start,
                        format!("`{}`: {e}", &text[lit.start..lit.end]),
                    )
                })?;
                spans.push(PointSpan {
                    point,
                    char_start: lit.start,
                    char_end: lit.end,
                });
            }
        }
    }
    Ok(spans)
}

/// Box spans of `text` that are individually valid; invalid literals skipped.
pub fn valid_boxes(text: &str) -> Vec<BoxSpan> {
    scan_literals(text)
        .into_iter()
        .filter_map(|lit| match lit.kind {
            LiteralKind::Numbers(v) if v.len() == 4 => {
                RegionBox::new(v[0], v[1], v[2], v[3]).ok().map(|region| BoxSpan {
                    region,
                    char_start: lit.start,
                    char_end: lit.end,
                })
            }
            _ => None,
        })
        .collect()
}

pub fn valid_points(text: &str) -> Vec<PointSpan> {
    scan_literals(text)
        .into_iter()
        .filter_map(|lit| match lit.kind {
            LiteralKind::Numbers(v) if v.len() == 2 => Point::new(v[0], v[1]).ok().map(|point| PointSpan {
                point,
                char_start: lit.start,
                char_end: lit.end,
            }),
            _ => None,
        })
        .collect()
}

/// Rewrites valid box literals (and, for PointQA, point literals) into the
/// canonical three-decimal form. Everything else is left untouched.
pub fn canonicalize_text(text: &str, task: TaskType) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for lit in scan_literals(text) {
        let replacement = match &lit.kind {
            LiteralKind::Numbers(v) if v.len() == 4 => {
                RegionBox::new(v[0], v[1], v[2], v[3]).ok().map(|b| serialize_box(&b))
            }
            LiteralKind::Numbers(v) if v.len() == 2 && task == TaskType::PointQa => {
                Point::new(v[0], v[1]).ok().map(|p| serialize_point(&p))
            }
            _ => None,
        };
        if let Some(r) = replacement {
            out.push_str(&text[last..lit.start]);
            out.push_str(&r);
            last = lit.end;
        }
    }
    out.push_str(&text[last..]);
    out
}

/// Text with every box/point literal removed, for checking whether a field
/// says anything beyond coordinates.
pub(crate) fn has_prose(text: &str) -> bool {
    let mut last = 0;
    let mut rest = String::new();
    for lit in scan_literals(text) {
        rest.push_str(&text[last..lit.start]);
        last = lit.end;
    }
    rest.push_str(&text[last..]);
    rest.chars().any(char::is_alphanumeric)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOptions {
    /// Match `Question:` / `Answer:` case-insensitively.
    pub lenient: bool,
}

struct Markers<'a> {
    haystack: std::borrow::Cow<'a, str>,
    question: &'static str,
    answer: &'static str,
}

impl<'a> Markers<'a> {
    fn new(text: &'a str, lenient: bool) -> Self {
        if lenient {
            // ASCII lowercasing keeps byte offsets intact
            Markers {
                haystack: text.to_ascii_lowercase().into(),
                question: "question:",
                answer: "answer:",
            }
        } else {
            Markers {
                haystack: text.into(),
                question: QUESTION,
                answer: ANSWER,
            }
        }
    }

    fn find(&self, marker: &str, from: usize) -> Option<usize> {
        self.haystack[from..].find(marker).map(|i| i + from)
    }

    fn starts_with(&self, marker: &str, at: usize) -> bool {
        self.haystack[at..].starts_with(marker)
    }
}

/// Trimmed `text[start..end]` and the byte offset where the trimmed part begins.
fn trimmed(text: &str, start: usize, end: usize) -> (&str, usize) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    (slice.trim(), start + lead)
}

struct Block<'a> {
    question: (&'a str, usize),
    answer: (&'a str, usize),
    question_marker: usize,
    answer_marker: usize,
}

fn split_blocks<'a>(raw: &'a str, options: ParseOptions) -> Result<Vec<Block<'a>>, ParseError> {
    use ParseErrorCode::*;
    let m = Markers::new(raw, options.lenient);
    let lead = raw.len() - raw.trim_start().len();
    let mut pos = lead;

    if !m.starts_with(m.question, pos) {
        return match m.find(m.question, pos) {
            None => Err(ParseError::new(
                MissingQuestionMarker,
                pos.min(raw.len()),
                "no `Question:` marker",
            )),
            Some(at) => Err(ParseError::new(
                TurnStructureError,
                pos,
                format!("unexpected text before the first `Question:` marker at byte {at}"),
            )),
        };
    }

    let mut blocks = Vec::new();
    while pos < raw.len() {
        let question_marker = pos;
        let q_start = pos + m.question.len();
        let Some(answer_marker) = m.find(m.answer, q_start) else {
            return Err(ParseError::new(
                MissingAnswerMarker,
                q_start,
                "`Question:` without a following `Answer:`",
            ));
        };
        if let Some(extra) = m.find(m.question, q_start).filter(|&at| at < answer_marker) {
            return Err(ParseError::new(
                TurnStructureError,
                extra,
                "two `Question:` markers without an `Answer:` between them",
            ));
        }
        let a_start = answer_marker + m.answer.len();
        let a_end = m.find(m.question, a_start).unwrap_or(raw.len());
        if let Some(extra) = m.find(m.answer, a_start).filter(|&at| at < a_end) {
            return Err(ParseError::new(
                TurnStructureError,
                extra,
                "two `Answer:` markers without a `Question:` between them",
            ));
        }
        blocks.push(Block {
            question: trimmed(raw, q_start, answer_marker),
            answer: trimmed(raw, a_start, a_end),
            question_marker,
            answer_marker,
        });
        pos = a_end;
    }
    Ok(blocks)
}

/// Parses raw generator output for `task` into a [`Sample`].
///
/// The sample id defaults to `image_ref`; callers that need unique ids
/// across generations overwrite it.
pub fn parse_generation(raw: &str, task: TaskType, image_ref: &str) -> ParseOutcome {
    parse_generation_with(raw, task, image_ref, ParseOptions::default())
}

pub fn parse_generation_with(raw: &str, task: TaskType, image_ref: &str, options: ParseOptions) -> ParseOutcome {
    use ParseErrorCode::*;
    let blocks = split_blocks(raw, options)?;
    if !task.allows_multi_turn() && blocks.len() != 1 {
        return Err(ParseError::new(
            TurnStructureError,
            blocks[1].question_marker,
            format!(
                "{task} expects exactly one Question/Answer block, found {}",
                blocks.len()
            ),
        ));
    }

    for block in &blocks {
        if block.question.0.is_empty() {
            return Err(ParseError::new(EmptyField, block.question_marker, "empty question"));
        }
        if block.answer.0.is_empty() {
            return Err(ParseError::new(EmptyField, block.answer_marker, "empty answer"));
        }
        for (text, offset) in [block.question, block.answer] {
            parse_box_spans(text).map_err(|e| e.shifted(offset))?;
            if task == TaskType::PointQa {
                parse_point_spans(text).map_err(|e| e.shifted(offset))?;
            }
        }
    }

    let first = &blocks[0];
    let (q, a) = (first.question.0, first.answer.0);
    match task {
        TaskType::Rec if valid_boxes(a).is_empty() => {
            return Err(ParseError::new(
                MissingRegion,
                first.answer.1,
                "REC answer contains no box",
            ))
        }
        TaskType::Reg if valid_boxes(q).is_empty() => {
            return Err(ParseError::new(
                MissingRegion,
                first.question.1,
                "REG question contains no box",
            ))
        }
        TaskType::Reg if !has_prose(a) => {
            return Err(ParseError::new(
                EmptyField,
                first.answer.1,
                "REG answer has no textual description",
            ))
        }
        TaskType::PointQa if valid_boxes(q).is_empty() && valid_points(q).is_empty() => {
            return Err(ParseError::new(
                MissingRegion,
                first.question.1,
                "PointQA question has neither a point nor a box",
            ))
        }
        _ => {}
    }

    Ok(Sample {
        id: image_ref.to_string(),
        image_ref: image_ref.to_string(),
        task,
        turns: blocks.iter().map(|b| Turn::new(b.question.0, b.answer.0)).collect(),
        provenance: Provenance::Generated,
        generator_meta: None,
    })
}

/// Canonical target text: one `Question: q Answer: a` block per turn,
/// separated by a single newline, coordinates in canonical form.
pub fn serialize_target(s: &Sample) -> String {
    s.turns
        .iter()
        .map(|t| {
            format!(
                "{QUESTION} {} {ANSWER} {}",
                canonicalize_text(&t.question, s.task),
                canonicalize_text(&t.answer, s.task)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Boxes referenced by a sample: all valid box spans of every question and
/// answer, in reading order.
pub fn sample_boxes(s: &Sample) -> Vec<RegionBox> {
    s.turns
        .iter()
        .flat_map(|t| valid_boxes(&t.question).into_iter().chain(valid_boxes(&t.answer)))
        .map(|span| span.region)
        .collect()
}
