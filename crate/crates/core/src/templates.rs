//! Generator prompt templates.
//!
//! A rendered prompt has the shape
//!
//! ```text
//! <s> {system} USER: <image> {general instruction}. {specific instruction} ASSISTANT:
//! ```
//!
//! The general instruction is drawn uniformly from an [`InstructionPool`];
//! the task's specific instruction ("This is a REC task.") is included with
//! probability `tau`. Both draws come from one [`SplitMix64`] seeded with the
//! caller's seed, index first, then the inclusion draw.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::schema::TaskType;

pub const MIN_POOL_SIZE: usize = 150;
pub const DEFAULT_SYSTEM_MESSAGE: &str = "A chat between a curious user and an artificial intelligence assistant.";
pub const IMAGE_PLACEHOLDER: &str = "<image>";

const BUNDLED_POOL: &str = include_str!("../assets/general_instructions.txt");
const RESERVED: [&str; 4] = [IMAGE_PLACEHOLDER, "USER:", "ASSISTANT:", "<s>"];

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("instruction pool has {found} entries, at least {MIN_POOL_SIZE} required")]
    PoolTooSmall { found: usize },
    #[error("line {line} repeats the instruction on line {first_line}: `{text}`")]
    DuplicateEntry {
        first_line: usize,
        line: usize,
        text: String,
    },
    #[error("`{text}` contains the reserved token `{token}`")]
    ReservedToken { text: String, token: &'static str },
    #[error("tau must be within [0, 1], got {0}")]
    TauOutOfRange(f64),
    #[error("specific-instruction config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionPool {
    entries: Vec<String>,
    source: PathBuf,
}

fn check_reserved(text: &str) -> Result<(), TemplateError> {
    match RESERVED.iter().find(|t| text.contains(**t)) {
        Some(token) => Err(TemplateError::ReservedToken {
            text: text.to_string(),
            token,
        }),
        None => Ok(()),
    }
}

impl InstructionPool {
    /// Parses pool text: one instruction per line, blank lines and lines
    /// starting with `#` ignored.
    pub fn from_text(text: &str, source: impl Into<PathBuf>) -> Result<Self, TemplateError> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(&first_line) = seen.get(line) {
                return Err(TemplateError::DuplicateEntry {
                    first_line,
                    line: idx + 1,
                    text: line.to_string(),
                });
            }
            check_reserved(line)?;
            seen.insert(line, idx + 1);
            entries.push(line.to_string());
        }
        if entries.len() < MIN_POOL_SIZE {
            return Err(TemplateError::PoolTooSmall { found: entries.len() });
        }
        Ok(InstructionPool {
            entries,
            source: source.into(),
        })
    }

    pub fn bundled() -> Self {
        Self::from_text(BUNDLED_POOL, "<bundled>").expect("bundled pool is valid")
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn source(&self) -> &Path {
        &self.source
    }
}

pub fn load_pool(path: &Path) -> Result<InstructionPool, TemplateError> {
    let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    InstructionPool::from_text(&text, path)
}

/// The canonical specific instruction, `This is a {display name} task.`
pub fn specific_instruction_for(task: TaskType) -> String {
    format!("This is a {} task.", task.display_name())
}

#[derive(Debug, Clone)]
pub struct PromptSpec {
    system_message: String,
    tau: f64,
    pool: Arc<InstructionPool>,
    specific: BTreeMap<TaskType, String>,
}

impl PromptSpec {
    pub fn new(pool: InstructionPool, tau: f64) -> Result<Self, TemplateError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(TemplateError::TauOutOfRange(tau));
        }
        Ok(PromptSpec {
            system_message: DEFAULT_SYSTEM_MESSAGE.to_string(),
            tau,
            pool: Arc::new(pool),
            specific: TaskType::ALL
                .into_iter()
                .map(|t| (t, specific_instruction_for(t)))
                .collect(),
        })
    }

    pub fn with_system_message(mut self, message: impl Into<String>) -> Result<Self, TemplateError> {
        let message = message.into();
        check_reserved(&message)?;
        self.system_message = message;
        Ok(self)
    }

    pub fn with_specific(mut self, task: TaskType, text: impl Into<String>) -> Result<Self, TemplateError> {
        let text = text.into();
        check_reserved(&text)?;
        self.specific.insert(task, text);
        Ok(self)
    }

    /// Applies overrides from a TOML file of `"Task name" = "instruction"`
    /// pairs. Keys may be any spelling accepted by `TaskType::from_str`.
    pub fn with_overrides_file(self, path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.with_overrides_toml(&text)
    }

    pub fn with_overrides_toml(mut self, text: &str) -> Result<Self, TemplateError> {
        let table: BTreeMap<String, String> = toml::from_str(text).map_err(|e| TemplateError::Config(e.to_string()))?;
        for (key, value) in table {
            let task: TaskType = key
                .parse()
                .map_err(|e: crate::schema::UnknownTask| TemplateError::Config(e.to_string()))?;
            self = self.with_specific(task, value)?;
        }
        Ok(self)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn system_message(&self) -> &str {
        &self.system_message
    }

    pub fn pool(&self) -> &InstructionPool {
        &self.pool
    }

    pub fn specific(&self, task: TaskType) -> &str {
        &self.specific[&task]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub full_text: String,
    pub general_used: usize,
    pub specific_included: bool,
    pub task: TaskType,
    pub seed: u64,
}

impl RenderedPrompt {
    /// Short identifier of the template choice, e.g. `g017+s`.
    pub fn prompt_id(&self) -> String {
        format!(
            "g{:03}{}",
            self.general_used,
            if self.specific_included { "+s" } else { "" }
        )
    }
}

fn with_terminal_punctuation(text: &str) -> String {
    if text.ends_with(['.', '?', '!']) {
        text.to_string()
    } else {
        format!("{text}.")
    }
}

pub fn render_prompt(spec: &PromptSpec, task: TaskType, seed: u64) -> RenderedPrompt {
    let mut rng = SplitMix64::new(seed);
    let general_used = rng.below(spec.pool.len() as u64) as usize;
    let specific_included = rng.next_f64() < spec.tau;

    let general = with_terminal_punctuation(&spec.pool.entries[general_used]);
    let mut full_text = format!("<s> {} USER: {IMAGE_PLACEHOLDER} {general}", spec.system_message);
    if specific_included {
        full_text.push(' ');
        full_text.push_str(spec.specific(task));
    }
    full_text.push_str(" ASSISTANT:");

    RenderedPrompt {
        full_text,
        general_used,
        specific_included,
        task,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(tau: f64) -> PromptSpec {
        PromptSpec::new(InstructionPool::bundled(), tau).unwrap()
    }

    #[test]
    fn bundled_pool() {
        let pool = InstructionPool::bundled();
        assert!(pool.len() >= MIN_POOL_SIZE);
        assert!(pool
            .entries()
            .iter()
            .any(|e| e == "Can you provide a clear and direct question and answer by analyzing the image?"));
    }

    #[test]
    fn load_pool_errors() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.txt");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(
            load_pool(&empty),
            Err(TemplateError::PoolTooSmall { found: 0 })
        ));

        let dup = dir.path().join("dup.txt");
        std::fs::write(&dup, "Give a question and answer\nGive a question and answer\n").unwrap();
        assert!(matches!(
            load_pool(&dup),
            Err(TemplateError::DuplicateEntry {
                first_line: 1,
                line: 2,
                ..
            })
        ));

        let reserved = format!("{}\nLook at <image> please\n", BUNDLED_POOL);
        assert!(matches!(
            InstructionPool::from_text(&reserved, "x"),
            Err(TemplateError::ReservedToken { .. })
        ));
    }

    #[test]
    fn specific_instruction_strings() {
        assert_eq!(specific_instruction_for(TaskType::Rec), "This is a REC task.");
        assert_eq!(
            specific_instruction_for(TaskType::CommonVqa),
            "This is a Common VQA task."
        );
        assert_eq!(specific_instruction_for(TaskType::Md), "This is a MD task.");
    }

    #[test]
    fn tau_one_includes_specific_before_assistant() {
        let spec = spec(1.0);
        for seed in 0..200 {
            let p = render_prompt(&spec, TaskType::CommonVqa, seed);
            assert!(p.specific_included);
            assert!(p.full_text.ends_with("This is a Common VQA task. ASSISTANT:"));
            assert!(p.full_text.contains(&spec.pool().entries()[p.general_used]));
        }
    }

    #[test]
    fn tau_zero_never_includes() {
        let spec = spec(0.0);
        for seed in 0..2000 {
            for task in TaskType::ALL {
                assert!(!render_prompt(&spec, task, seed).specific_included);
            }
        }
    }

    #[test]
    fn tau_half_binomial_band() {
        // n = 10000, p = 0.5: sd = 0.005, band is +/- 4 sd
        let spec = spec(0.5);
        let hits = (0..10_000u64)
            .filter(|&s| render_prompt(&spec, TaskType::Rec, s).specific_included)
            .count();
        let frac = hits as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn exact_layout_and_determinism() {
        let spec = spec(0.5);
        let a = render_prompt(&spec, TaskType::Reg, 42);
        assert_eq!(a, render_prompt(&spec, TaskType::Reg, 42));

        let mut rng = SplitMix64::new(42);
        let idx = rng.below(spec.pool().len() as u64) as usize;
        let inc = rng.next_f64() < 0.5;
        assert_eq!((a.general_used, a.specific_included), (idx, inc));

        let general = with_terminal_punctuation(&spec.pool().entries()[idx]);
        let tail = if inc { " This is a REG task." } else { "" };
        assert_eq!(
            a.full_text,
            format!("<s> {DEFAULT_SYSTEM_MESSAGE} USER: <image> {general}{tail} ASSISTANT:")
        );
    }

    #[test]
    fn structural_tokens_appear_once_and_every_entry_is_reachable() {
        let spec = spec(0.5);
        let n = spec.pool().len();
        let mut used = vec![false; n];
        for seed in 0..(100 * n) as u64 {
            let p = render_prompt(&spec, TaskType::Md, seed);
            used[p.general_used] = true;
            if seed < 1000 {
                for token in ["<image>", "USER:", "ASSISTANT:"] {
                    assert_eq!(p.full_text.matches(token).count(), 1);
                }
            }
        }
        assert!(used.iter().all(|u| *u));
    }

    #[test]
    fn overrides_and_validation() {
        let spec = spec(1.0)
            .with_overrides_toml("\"REC\" = \"Locate the object.\"\npoint_qa = \"Answer about the point.\"")
            .unwrap();
        assert_eq!(spec.specific(TaskType::Rec), "Locate the object.");
        assert_eq!(spec.specific(TaskType::PointQa), "Answer about the point.");
        assert_eq!(spec.specific(TaskType::Reg), "This is a REG task.");
        assert!(spec.clone().with_overrides_toml("captioning = \"x\"").is_err());
        assert!(matches!(
            PromptSpec::new(InstructionPool::bundled(), 1.2),
            Err(TemplateError::TauOutOfRange(_))
        ));
        assert!(spec.with_system_message("USER: hi").is_err());
    }

    #[test]
    fn punctuation_is_not_doubled() {
        assert_eq!(with_terminal_punctuation("Give a question"), "Give a question.");
        assert_eq!(with_terminal_punctuation("Can you?"), "Can you?");
    }
}
