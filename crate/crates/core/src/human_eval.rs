//! Human evaluation of generated samples: seeded review batches, judgment
//! sessions exported by the review UI, and per-question-type correctness
//! reports.
//!
//! Batch file: a header line followed by one sample per line.
//! Session file: a header line followed by one judgment per line.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::io::{self, RecordError};
use crate::rng::{derive_seed, SplitMix64};
use crate::schema::Sample;

pub const BATCH_VERSION: u32 = 1;
pub const SESSION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionTypeLabel {
    Action,
    Color,
    Counting,
    ObjectType,
    RelativePosition,
    YesNo,
    Others,
}

impl QuestionTypeLabel {
    /// Report row order.
    pub const ALL: [QuestionTypeLabel; 7] = [
        QuestionTypeLabel::Action,
        QuestionTypeLabel::Color,
        QuestionTypeLabel::Counting,
        QuestionTypeLabel::ObjectType,
        QuestionTypeLabel::RelativePosition,
        QuestionTypeLabel::YesNo,
        QuestionTypeLabel::Others,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            QuestionTypeLabel::Action => "Action",
            QuestionTypeLabel::Color => "Color",
            QuestionTypeLabel::Counting => "Counting",
            QuestionTypeLabel::ObjectType => "Object Type",
            QuestionTypeLabel::RelativePosition => "Relative Position",
            QuestionTypeLabel::YesNo => "Yes/No",
            QuestionTypeLabel::Others => "Others",
        }
    }
}

impl fmt::Display for QuestionTypeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for QuestionTypeLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        Self::ALL
            .into_iter()
            .find(|l| {
                let name: String = l.display_name().chars().filter(|c| c.is_alphanumeric()).collect();
                name.to_lowercase() == norm
            })
            .ok_or_else(|| format!("unknown question type `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTag {
    HeldIn,
    HeldOut,
}

impl FromStr for EvalTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").to_lowercase().as_str() {
            "held_in" => Ok(EvalTag::HeldIn),
            "held_out" => Ok(EvalTag::HeldOut),
            other => Err(format!("unknown tag `{other}` (expected held_in or held_out)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Io(#[from] RecordError),
    #[error("requested {requested} samples but the corpus has {available}")]
    InsufficientSamples { requested: usize, available: usize },
    #[error("line {line}: {detail}")]
    SchemaViolation { line: usize, detail: String },
    #[error("line {line}: sample `{id}` is not in the batch")]
    UnknownSampleId { line: usize, id: String },
    #[error("line {line}: sample `{id}` judged twice")]
    DuplicateJudgment { line: usize, id: String },
    #[error("session `{session}` is missing {missing} judgment(s)")]
    IncompleteSession { session: String, missing: usize },
    #[error("session `{session}` refers to batch `{found}`, expected `{expected}`")]
    BatchMismatch {
        session: String,
        expected: String,
        found: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchHeader {
    pub batch_version: u32,
    pub batch_id: String,
    pub tag: EvalTag,
    pub seed: u64,
    pub size: usize,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub header: BatchHeader,
    pub samples: Vec<Sample>,
}

impl Batch {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<(), RecordError> {
        let mut text = serde_json::to_string(&self.header).expect("header serializes");
        text.push('\n');
        for s in &self.samples {
            text.push_str(&serde_json::to_string(s).expect("sample serializes"));
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| RecordError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Batch, EvalError> {
        let lines = io::read_lines(path)?;
        let mut iter = lines.into_iter();
        let (line, first) = iter.next().ok_or(EvalError::SchemaViolation {
            line: 1,
            detail: "missing batch header".into(),
        })?;
        let header: BatchHeader = serde_json::from_str(&first).map_err(|e| EvalError::SchemaViolation {
            line,
            detail: format!("bad batch header: {e}"),
        })?;
        let samples = iter
            .map(|(line, text)| {
                serde_json::from_str::<Sample>(&text).map_err(|e| EvalError::SchemaViolation {
                    line,
                    detail: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if samples.len() != header.size {
            return Err(EvalError::SchemaViolation {
                line: 1,
                detail: format!("header declares {} samples, file has {}", header.size, samples.len()),
            });
        }
        Ok(Batch { header, samples })
    }
}

/// Draws `n` samples without replacement with a seeded partial shuffle.
pub fn draw_batch(samples: &[Sample], n: usize, seed: u64, tag: EvalTag, source: &str) -> Result<Batch, EvalError> {
    if n > samples.len() {
        return Err(EvalError::InsufficientSamples {
            requested: n,
            available: samples.len(),
        });
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    SplitMix64::new(seed).partial_shuffle(&mut order, n);
    let picked: Vec<Sample> = order[..n].iter().map(|&i| samples[i].clone()).collect();
    let mut seen = HashSet::new();
    if let Some(dup) = picked.iter().find(|s| !seen.insert(s.id.as_str())) {
        return Err(EvalError::SchemaViolation {
            line: 0,
            detail: format!("sample id `{}` occurs more than once in the corpus", dup.id),
        });
    }
    let tag_name = match tag {
        EvalTag::HeldIn => "held_in",
        EvalTag::HeldOut => "held_out",
    };
    let batch_id = format!(
        "{tag_name}-{:016x}",
        derive_seed(&[source, &n.to_string(), &seed.to_string(), tag_name])
    );
    Ok(Batch {
        header: BatchHeader {
            batch_version: BATCH_VERSION,
            batch_id,
            tag,
            seed,
            size: n,
            source: source.into(),
        },
        samples: picked,
    })
}

/// Reads a sample file and draws a batch from it.
pub fn sample_batch(samples_path: &Path, n: usize, seed: u64, tag: EvalTag) -> Result<Batch, EvalError> {
    let samples: Vec<Sample> = io::read_jsonl(samples_path)?;
    let source = samples_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    draw_batch(&samples, n, seed, tag, &source)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionHeader {
    pub schema_version: u32,
    pub session_id: String,
    pub batch_ref: String,
    pub annotator: String,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Judgment {
    pub sample_id: String,
    #[serde(rename = "type")]
    pub label: QuestionTypeLabel,
    pub correct: bool,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSession {
    pub header: SessionHeader,
    pub judgments: Vec<Judgment>,
}

impl EvalSession {
    pub fn save(&self, path: &Path) -> Result<(), RecordError> {
        let mut text = serde_json::to_string(&self.header).expect("header serializes");
        text.push('\n');
        for j in &self.judgments {
            text.push_str(&serde_json::to_string(j).expect("judgment serializes"));
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| RecordError::io(path, e))
    }

    pub fn is_complete_for(&self, batch: &Batch) -> bool {
        let judged: HashSet<&str> = self.judgments.iter().map(|j| j.sample_id.as_str()).collect();
        batch.ids().all(|id| judged.contains(id))
    }
}

/// Parses and validates a session file against its batch.
pub fn ingest_session(path: &Path, batch: &Batch) -> Result<EvalSession, EvalError> {
    let lines = io::read_lines(path)?;
    parse_session(&lines, batch)
}

pub fn parse_session(lines: &[(usize, String)], batch: &Batch) -> Result<EvalSession, EvalError> {
    let Some((line, first)) = lines.first() else {
        return Err(EvalError::SchemaViolation {
            line: 1,
            detail: "missing session header".into(),
        });
    };
    let header: SessionHeader = serde_json::from_str(first).map_err(|e| EvalError::SchemaViolation {
        line: *line,
        detail: format!("bad session header: {e}"),
    })?;
    if header.schema_version != SESSION_SCHEMA_VERSION {
        return Err(EvalError::SchemaViolation {
            line: *line,
            detail: format!("unsupported schema_version {}", header.schema_version),
        });
    }
    if header.batch_ref != batch.header.batch_id {
        return Err(EvalError::BatchMismatch {
            session: header.session_id,
            expected: batch.header.batch_id.clone(),
            found: header.batch_ref,
        });
    }
    let known: HashSet<&str> = batch.ids().collect();
    let mut seen = HashSet::new();
    let mut judgments = Vec::new();
    for (line, text) in &lines[1..] {
        let j: Judgment = serde_json::from_str(text).map_err(|e| EvalError::SchemaViolation {
            line: *line,
            detail: e.to_string(),
        })?;
        if j.timestamp.trim().is_empty() {
            return Err(EvalError::SchemaViolation {
                line: *line,
                detail: "empty timestamp".into(),
            });
        }
        if !known.contains(j.sample_id.as_str()) {
            return Err(EvalError::UnknownSampleId {
                line: *line,
                id: j.sample_id,
            });
        }
        if !seen.insert(j.sample_id.clone()) {
            return Err(EvalError::DuplicateJudgment {
                line: *line,
                id: j.sample_id,
            });
        }
        judgments.push(j);
    }
    let session = EvalSession { header, judgments };
    if session.header.status == SessionStatus::Complete && !session.is_complete_for(batch) {
        return Err(EvalError::SchemaViolation {
            line: *line,
            detail: "session marked complete but not every sample is judged".into(),
        });
    }
    Ok(session)
}

/// `round(100 * correct / count)` with halves rounded up.
pub fn percent(correct: usize, count: usize) -> u32 {
    assert!(count > 0 && correct <= count);
    ((200 * correct + count) / (2 * count)) as u32
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: QuestionTypeLabel,
    pub samples: usize,
    pub correct: usize,
    pub percent: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub annotators: usize,
    /// Fraction of samples on which every annotator chose the same type.
    pub type_agreement: f64,
    /// Fraction of samples on which every annotator gave the same verdict.
    pub correct_agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub batch_id: String,
    pub tag: EvalTag,
    pub total: usize,
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<Agreement>,
}

impl EvalReport {
    pub fn row(&self, label: QuestionTypeLabel) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Combines complete sessions over `batch` into per-type rows. With several
/// annotators each sample takes the majority type (ties go to the earlier
/// row) and the majority verdict (ties count as incorrect).
pub fn aggregate(sessions: &[EvalSession], batch: &Batch) -> Result<EvalReport, EvalError> {
    let mut votes: HashMap<&str, Vec<(QuestionTypeLabel, bool)>> = HashMap::new();
    for s in sessions {
        if s.header.batch_ref != batch.header.batch_id {
            return Err(EvalError::BatchMismatch {
                session: s.header.session_id.clone(),
                expected: batch.header.batch_id.clone(),
                found: s.header.batch_ref.clone(),
            });
        }
        let by_id: HashMap<&str, &Judgment> = s.judgments.iter().map(|j| (j.sample_id.as_str(), j)).collect();
        let missing = batch.ids().filter(|id| !by_id.contains_key(id)).count();
        if missing > 0 {
            return Err(EvalError::IncompleteSession {
                session: s.header.session_id.clone(),
                missing,
            });
        }
        for id in batch.ids() {
            let j = by_id[id];
            votes.entry(id).or_default().push((j.label, j.correct));
        }
    }

    let mut tally: BTreeMap<QuestionTypeLabel, (usize, usize)> = BTreeMap::new();
    let (mut same_type, mut same_verdict) = (0, 0);
    for id in batch.ids() {
        let Some(v) = votes.get(id) else { continue };
        let mut type_counts: BTreeMap<QuestionTypeLabel, usize> = BTreeMap::new();
        for (label, _) in v {
            *type_counts.entry(*label).or_insert(0) += 1;
        }
        let best = type_counts.values().copied().max().unwrap_or(0);
        let label = *type_counts
            .iter()
            .find(|(_, &c)| c == best)
            .map(|(l, _)| l)
            .expect("at least one vote");
        let yes = v.iter().filter(|(_, c)| *c).count();
        let correct = 2 * yes > v.len();
        let entry = tally.entry(label).or_insert((0, 0));
        entry.0 += 1;
        entry.1 += correct as usize;
        same_type += (type_counts.len() == 1) as usize;
        same_verdict += (yes == 0 || yes == v.len()) as usize;
    }

    let rows: Vec<ReportRow> = tally
        .into_iter()
        .map(|(label, (samples, correct))| ReportRow {
            label,
            samples,
            correct,
            percent: percent(correct, samples),
        })
        .collect();
    let judged = batch.samples.len();
    let agreement = (sessions.len() > 1 && judged > 0).then(|| Agreement {
        annotators: sessions.len(),
        type_agreement: same_type as f64 / judged as f64,
        correct_agreement: same_verdict as f64 / judged as f64,
    });
    Ok(EvalReport {
        batch_id: batch.header.batch_id.clone(),
        tag: batch.header.tag,
        total: rows.iter().map(|r| r.samples).sum(),
        rows,
        agreement,
    })
}

/// Two reports side by side: `Question Type | #Samples | Correct (~%)` for
/// each. Types missing from a report show `-`.
pub fn render_side_by_side(left: (&str, &EvalReport), right: (&str, &EvalReport)) -> String {
    let cell = |r: &EvalReport, l| {
        r.row(l)
            .map(|row| (row.samples.to_string(), row.percent.to_string()))
            .unwrap_or_else(|| ("-".into(), "-".into()))
    };
    let mut out = String::new();
    let _ = writeln!(out, "{:<18} | {:^24} | {:^24}", "", left.0, right.0);
    let _ = writeln!(
        out,
        "{:<18} | {:>10} {:>13} | {:>10} {:>13}",
        "Question Type", "#Samples", "Correct (~%)", "#Samples", "Correct (~%)"
    );
    out.push_str(&"-".repeat(74));
    out.push('\n');
    for label in QuestionTypeLabel::ALL {
        if left.1.row(label).is_none() && right.1.row(label).is_none() {
            continue;
        }
        let (ls, lp) = cell(left.1, label);
        let (rs, rp) = cell(right.1, label);
        let _ = writeln!(
            out,
            "{:<18} | {ls:>10} {lp:>13} | {rs:>10} {rp:>13}",
            label.display_name()
        );
    }
    let _ = writeln!(
        out,
        "{:<18} | {:>10} {:>13} | {:>10} {:>13}",
        "Total", left.1.total, "", right.1.total, ""
    );
    out
}

/// Heuristic keyword pre-labeler used only to pre-fill the review UI. The
/// annotator's choice is authoritative.
pub fn prelabel(question: &str) -> QuestionTypeLabel {
    let q = question.trim().to_lowercase();
    let first = q.split_whitespace().next().unwrap_or("");
    let has = |words: &[&str]| words.iter().any(|w| q.contains(w));
    if has(&["how many", "number of", "count"]) {
        QuestionTypeLabel::Counting
    } else if has(&["color", "colour"]) {
        QuestionTypeLabel::Color
    } else if has(&[
        " left",
        " right",
        "behind",
        "in front of",
        "next to",
        "above",
        "below",
        "beside",
        "position",
        "where ",
    ]) {
        QuestionTypeLabel::RelativePosition
    } else if has(&["doing", "action", "activity", "playing", "holding"]) {
        QuestionTypeLabel::Action
    } else if [
        "is", "are", "does", "do", "can", "was", "were", "has", "have", "will", "could", "should",
    ]
    .contains(&first)
    {
        QuestionTypeLabel::YesNo
    } else if has(&[
        "what type",
        "what kind",
        "which type",
        "what animal",
        "what object",
        "what is this",
        "what is the",
    ]) {
        QuestionTypeLabel::ObjectType
    } else {
        QuestionTypeLabel::Others
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Provenance, TaskType, Turn};
    use proptest::prelude::*;

    fn corpus(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                id: format!("s{i}"),
                image_ref: format!("im{i}.jpg"),
                task: TaskType::CommonVqa,
                turns: vec![Turn::new("What is shown?", "A cat.")],
                provenance: Provenance::Generated,
                generator_meta: None,
            })
            .collect()
    }

    fn session(batch: &Batch, id: &str, judge: impl Fn(usize) -> (QuestionTypeLabel, bool)) -> EvalSession {
        EvalSession {
            header: SessionHeader {
                schema_version: SESSION_SCHEMA_VERSION,
                session_id: id.into(),
                batch_ref: batch.header.batch_id.clone(),
                annotator: "a1".into(),
                status: SessionStatus::Complete,
            },
            judgments: batch
                .samples
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let (label, correct) = judge(i);
                    Judgment {
                        sample_id: s.id.clone(),
                        label,
                        correct,
                        timestamp: "2024-01-01T00:00:00Z".into(),
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn batches_are_seeded() {
        let c = corpus(1000);
        let a = draw_batch(&c, 200, 7, EvalTag::HeldIn, "c").unwrap();
        let ids: HashSet<&str> = a.ids().collect();
        assert_eq!(ids.len(), 200);
        assert_eq!(a, draw_batch(&c, 200, 7, EvalTag::HeldIn, "c").unwrap());
        assert_ne!(a.samples, draw_batch(&c, 200, 8, EvalTag::HeldIn, "c").unwrap().samples);
        assert!(draw_batch(&c, 0, 7, EvalTag::HeldOut, "c").unwrap().samples.is_empty());
        assert!(matches!(
            draw_batch(&c, 1001, 7, EvalTag::HeldIn, "c"),
            Err(EvalError::InsufficientSamples {
                requested: 1001,
                available: 1000
            })
        ));
    }

    #[test]
    fn batch_and_session_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let batch = draw_batch(&corpus(10), 4, 1, EvalTag::HeldOut, "c").unwrap();
        let bp = dir.path().join("batch.jsonl");
        batch.save(&bp).unwrap();
        assert_eq!(Batch::load(&bp).unwrap(), batch);

        let s = session(&batch, "sess", |i| (QuestionTypeLabel::Action, i != 0));
        let sp = dir.path().join("session.jsonl");
        s.save(&sp).unwrap();
        let loaded = ingest_session(&sp, &batch).unwrap();
        assert_eq!(loaded.judgments.len(), 4);
        let report = aggregate(&[loaded], &batch).unwrap();
        assert_eq!(
            report.rows,
            vec![ReportRow {
                label: QuestionTypeLabel::Action,
                samples: 4,
                correct: 3,
                percent: 75
            }]
        );
    }

    #[test]
    fn session_errors() {
        let batch = draw_batch(&corpus(10), 3, 1, EvalTag::HeldIn, "c").unwrap();
        let s = session(&batch, "sess", |_| (QuestionTypeLabel::Color, true));
        let header = serde_json::to_string(&s.header).unwrap();
        let judgment = |id: &str| {
            serde_json::to_string(&Judgment {
                sample_id: id.into(),
                label: QuestionTypeLabel::Color,
                correct: true,
                timestamp: "t".into(),
            })
            .unwrap()
        };
        let open_header = header.replace("\"complete\"", "\"open\"");
        let first = batch.samples[0].id.clone();
        let lines = |v: Vec<String>| v.into_iter().enumerate().map(|(i, l)| (i + 1, l)).collect::<Vec<_>>();

        let unknown = lines(vec![open_header.clone(), judgment("zzz")]);
        assert!(matches!(
            parse_session(&unknown, &batch),
            Err(EvalError::UnknownSampleId { line: 2, .. })
        ));
        let dup = lines(vec![open_header.clone(), judgment(&first), judgment(&first)]);
        assert!(matches!(
            parse_session(&dup, &batch),
            Err(EvalError::DuplicateJudgment { line: 3, .. })
        ));
        let bad = lines(vec![open_header.clone(), r#"{"sample_id":"x"}"#.into()]);
        assert!(matches!(
            parse_session(&bad, &batch),
            Err(EvalError::SchemaViolation { line: 2, .. })
        ));
        let claimed_complete = lines(vec![header, judgment(&first)]);
        assert!(matches!(
            parse_session(&claimed_complete, &batch),
            Err(EvalError::SchemaViolation { .. })
        ));

        let partial = parse_session(&lines(vec![open_header, judgment(&first)]), &batch).unwrap();
        assert!(matches!(
            aggregate(&[partial], &batch),
            Err(EvalError::IncompleteSession { missing: 2, .. })
        ));
    }

    #[test]
    fn rounding_and_reachability() {
        assert_eq!(percent(3, 4), 75);
        assert_eq!(percent(5, 5), 100);
        assert_eq!(percent(1, 8), 13);
        assert_eq!(percent(26, 46), 57);
        // no whole number of correct answers out of 31 rounds to 89
        assert!((0..=31).all(|c| percent(c, 31) != 89));
    }

    #[test]
    fn majority_and_agreement() {
        let batch = draw_batch(&corpus(10), 4, 3, EvalTag::HeldIn, "c").unwrap();
        let a = session(&batch, "a", |i| (QuestionTypeLabel::Counting, i < 3));
        let b = session(&batch, "b", |i| (QuestionTypeLabel::Counting, i < 2));
        let c = session(&batch, "c", |i| {
            (
                if i == 0 {
                    QuestionTypeLabel::Color
                } else {
                    QuestionTypeLabel::Counting
                },
                i < 3,
            )
        });
        let r = aggregate(&[a, b, c], &batch).unwrap();
        assert_eq!(
            r.rows,
            vec![ReportRow {
                label: QuestionTypeLabel::Counting,
                samples: 4,
                correct: 3,
                percent: 75
            }]
        );
        let ag = r.agreement.unwrap();
        assert_eq!(
            (ag.annotators, ag.type_agreement, ag.correct_agreement),
            (3, 0.75, 0.75)
        );
    }

    #[test]
    fn labels_and_prelabel() {
        assert_eq!(QuestionTypeLabel::ALL.len(), 7);
        assert_eq!("Yes/No".parse::<QuestionTypeLabel>().unwrap(), QuestionTypeLabel::YesNo);
        assert_eq!(
            "object_type".parse::<QuestionTypeLabel>().unwrap(),
            QuestionTypeLabel::ObjectType
        );
        assert_eq!(prelabel("How many people are there?"), QuestionTypeLabel::Counting);
        assert_eq!(prelabel("What color is the bus?"), QuestionTypeLabel::Color);
        assert_eq!(prelabel("Is the man smiling?"), QuestionTypeLabel::YesNo);
        assert_eq!(prelabel("What is the man doing?"), QuestionTypeLabel::Action);
        assert_eq!(
            prelabel("What is on the left of the dog?"),
            QuestionTypeLabel::RelativePosition
        );
        assert_eq!(prelabel("What kind of animal is this?"), QuestionTypeLabel::ObjectType);
        assert_eq!(prelabel("Why?"), QuestionTypeLabel::Others);
    }

    proptest! {
        #[test]
        fn aggregation_ignores_order(judged in proptest::collection::vec((0usize..7, any::<bool>()), 1..60), seed in any::<u64>()) {
            let batch = draw_batch(&corpus(judged.len()), judged.len(), 0, EvalTag::HeldOut, "c").unwrap();
            let s = session(&batch, "s", |i| (QuestionTypeLabel::ALL[judged[i].0], judged[i].1));
            let mut shuffled = s.clone();
            let len = shuffled.judgments.len();
            SplitMix64::new(seed).partial_shuffle(&mut shuffled.judgments, len);
            let (r1, r2) = (aggregate(&[s], &batch).unwrap(), aggregate(&[shuffled], &batch).unwrap());
            prop_assert_eq!(&r1, &r2);
            prop_assert_eq!(r1.total, judged.len());
            prop_assert!(r1.rows.iter().all(|r| r.samples > 0));
        }
    }
}
