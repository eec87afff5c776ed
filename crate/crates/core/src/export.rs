//! Training-ready exports of kept samples.
//!
//! `conversation` writes a JSON array of records shaped like
//! `{"id", "image", "conversations": [{"from": "human", "value": "<image>\n..."}, {"from": "gpt", ...}]}`.
//! `flat` writes one JSON line per turn.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::io::{self, RecordError};
use crate::schema::{Sample, TaskType};
use crate::templates::IMAGE_PLACEHOLDER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Conversation,
    Flat,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conversation" => Ok(ExportFormat::Conversation),
            "flat" => Ok(ExportFormat::Flat),
            other => Err(format!(
                "unknown export format `{other}` (expected conversation or flat)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub from: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationRecord {
    pub id: String,
    pub image: String,
    pub conversations: Vec<Message>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatRow {
    pub id: String,
    pub image: String,
    pub task: TaskType,
    pub turn: usize,
    pub question: String,
    pub answer: String,
}

pub fn to_conversation(s: &Sample) -> ConversationRecord {
    let mut conversations = Vec::with_capacity(s.turns.len() * 2);
    for (i, turn) in s.turns.iter().enumerate() {
        let question = if i == 0 {
            format!("{IMAGE_PLACEHOLDER}\n{}", turn.question)
        } else {
            turn.question.clone()
        };
        conversations.push(Message {
            from: "human".into(),
            value: question,
        });
        conversations.push(Message {
            from: "gpt".into(),
            value: turn.answer.clone(),
        });
    }
    ConversationRecord {
        id: s.id.clone(),
        image: s.image_ref.clone(),
        conversations,
    }
}

pub fn to_flat(s: &Sample) -> Vec<FlatRow> {
    s.turns
        .iter()
        .enumerate()
        .map(|(i, t)| FlatRow {
            id: s.id.clone(),
            image: s.image_ref.clone(),
            task: s.task,
            turn: i,
            question: t.question.clone(),
            answer: t.answer.clone(),
        })
        .collect()
}

/// Exports `samples` to `out`; returns the number of records written.
pub fn export_samples(samples: &[Sample], out: &Path, format: ExportFormat) -> Result<usize, RecordError> {
    match format {
        ExportFormat::Conversation => {
            let records: Vec<ConversationRecord> = samples.iter().map(to_conversation).collect();
            io::write_json_pretty(out, &records)?;
            Ok(records.len())
        }
        ExportFormat::Flat => {
            let rows: Vec<FlatRow> = samples.iter().flat_map(to_flat).collect();
            io::write_jsonl(out, &rows)?;
            Ok(rows.len())
        }
    }
}

pub fn export_file(kept: &Path, out: &Path, format: ExportFormat) -> Result<usize, RecordError> {
    let samples: Vec<Sample> = io::read_jsonl(kept)?;
    export_samples(&samples, out, format)
}
