//! Tasks, instances, and few-shot prompt sets.
//!
//! A task is a multiple-choice problem with an ordered list of option keys.
//! Binary classification tasks are two-option multiple-choice tasks; the
//! class names live in the choice texts, so a single parser and a single vote
//! path serve every task.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Separator that would let a field break out of a rendered prompt block.
pub const PROMPT_SEPARATOR: &str = "\n\nQ:";

pub const DEFAULT_ANSWER_PHRASE: &str = "So the answer is:";

/// Upper bound on demonstrations in a prompt set.
pub const MAX_PROMPT_EXAMPLES: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}:{line}: malformed JSON line: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate instance_id {id:?}")]
    DuplicateInstance {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("instance {id:?}: choice keys {found:?} do not match option keys {expected:?}")]
    ChoiceKeyMismatch {
        id: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("instance {id:?}: label not in option set: {label:?}")]
    LabelNotInOptions { id: String, label: String },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid prompt set: {0}")]
    InvalidPromptSet(String),
}

impl TaskError {
    fn at_line(self, path: &Path, line: usize) -> Self {
        match self {
            TaskError::ChoiceKeyMismatch { .. } | TaskError::LabelNotInOptions { .. } => {
                TaskError::MalformedLine {
                    path: path.to_path_buf(),
                    line,
                    message: self.to_string(),
                }
            }
            other => other,
        }
    }
}

/// A lowercase label key such as `a` or `e`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OptionKey(String);

impl OptionKey {
    /// Normalizes case and validates that the key is a single token.
    pub fn new(raw: &str) -> Result<Self, TaskError> {
        let key = raw.trim().to_lowercase();
        if key.is_empty() {
            return Err(TaskError::InvalidTask("empty option key".into()));
        }
        if !key.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-') {
            return Err(TaskError::InvalidTask(format!(
                "option key {raw:?} is not a single alphanumeric token"
            )));
        }
        Ok(OptionKey(key))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for OptionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for OptionKey {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultipleChoice,
    BinaryClassification,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub kind: TaskKind,
    pub option_keys: Vec<OptionKey>,
    pub answer_phrase: String,
}

#[derive(Deserialize)]
struct RawManifest {
    task_id: String,
    kind: TaskKind,
    option_keys: Vec<String>,
    #[serde(default)]
    answer_phrase: Option<String>,
}

impl TaskSpec {
    pub fn new(
        task_id: impl Into<String>,
        kind: TaskKind,
        option_keys: &[&str],
        answer_phrase: Option<&str>,
    ) -> Result<Self, TaskError> {
        let option_keys = option_keys
            .iter()
            .map(|k| OptionKey::new(k))
            .collect::<Result<Vec<_>, _>>()?;
        let spec = TaskSpec {
            task_id: task_id.into(),
            kind,
            option_keys,
            answer_phrase: answer_phrase.unwrap_or(DEFAULT_ANSWER_PHRASE).to_string(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Five-way task with keys `a`..`e`, the layout of CommonsenseQA.
    pub fn multiple_choice(task_id: impl Into<String>, n_options: usize) -> Result<Self, TaskError> {
        let keys: Vec<String> = (0..n_options)
            .map(|i| ((b'a' + i as u8) as char).to_string())
            .collect();
        let refs: Vec<&str> = keys.iter().map(String::as_str).collect();
        Self::new(task_id, TaskKind::MultipleChoice, &refs, None)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.task_id.trim().is_empty() {
            return Err(TaskError::InvalidTask("task_id is empty".into()));
        }
        if self.option_keys.is_empty() {
            return Err(TaskError::InvalidTask("option_keys is empty".into()));
        }
        let mut seen = HashSet::new();
        for key in &self.option_keys {
            if OptionKey::new(key.as_str())?.as_str() != key.as_str() {
                return Err(TaskError::InvalidTask(format!("option key {key:?} is not normalized")));
            }
            if !seen.insert(key.as_str()) {
                return Err(TaskError::InvalidTask(format!("duplicate option key {key:?}")));
            }
        }
        if self.kind == TaskKind::BinaryClassification && self.option_keys.len() != 2 {
            return Err(TaskError::InvalidTask(format!(
                "binary_classification requires exactly 2 option keys, got {}",
                self.option_keys.len()
            )));
        }
        if self.answer_phrase.trim().is_empty() {
            return Err(TaskError::InvalidTask("answer_phrase is empty".into()));
        }
        Ok(())
    }

    pub fn key(&self, raw: &str) -> Option<&OptionKey> {
        let needle = raw.trim().to_lowercase();
        self.option_keys.iter().find(|k| k.as_str() == needle)
    }

    pub fn has_key(&self, key: &OptionKey) -> bool {
        self.option_keys.contains(key)
    }

    pub fn load_manifest(path: &Path) -> Result<Self, TaskError> {
        let text = fs::read_to_string(path).map_err(|source| TaskError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let raw: RawManifest = serde_json::from_str(&text).map_err(|e| TaskError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let keys: Vec<&str> = raw.option_keys.iter().map(String::as_str).collect();
        TaskSpec::new(raw.task_id, raw.kind, &keys, raw.answer_phrase.as_deref()).map_err(|e| {
            TaskError::Manifest {
                path: path.to_path_buf(),
                message: e.to_string(),
            }
        })
    }
}

/// One question with its answer choices and optional gold label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub instance_id: String,
    pub task_id: String,
    pub question: String,
    pub choices: BTreeMap<OptionKey, String>,
    pub gold_label: Option<OptionKey>,
}

/// Line format of the instances JSONL file. Field order is the canonical order.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct InstanceRecord {
    pub id: String,
    pub question: String,
    pub choices: BTreeMap<String, String>,
    #[serde(default)]
    pub gold: Option<String>,
}

impl Instance {
    pub fn new(
        task: &TaskSpec,
        instance_id: impl Into<String>,
        question: impl Into<String>,
        choices: &[(&str, &str)],
        gold: Option<&str>,
    ) -> Result<Self, TaskError> {
        let record = InstanceRecord {
            id: instance_id.into(),
            question: question.into(),
            choices: choices
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            gold: gold.map(str::to_string),
        };
        Self::from_record(task, record)
    }

    pub(crate) fn from_record(task: &TaskSpec, record: InstanceRecord) -> Result<Self, TaskError> {
        if record.id.trim().is_empty() {
            return Err(TaskError::InvalidTask("instance id is empty".into()));
        }
        let mut choices = BTreeMap::new();
        for (key, text) in record.choices {
            let key = OptionKey::new(&key).map_err(|_| TaskError::ChoiceKeyMismatch {
                id: record.id.clone(),
                expected: task.option_keys.iter().map(|k| k.to_string()).collect(),
                found: vec![key.clone()],
            })?;
            if choices.insert(key.clone(), text).is_some() {
                return Err(TaskError::ChoiceKeyMismatch {
                    id: record.id.clone(),
                    expected: task.option_keys.iter().map(|k| k.to_string()).collect(),
                    found: vec![key.to_string(), key.to_string()],
                });
            }
        }
        let mut expected: Vec<&str> = task.option_keys.iter().map(OptionKey::as_str).collect();
        expected.sort_unstable();
        let found: Vec<&str> = choices.keys().map(OptionKey::as_str).collect();
        if expected != found {
            return Err(TaskError::ChoiceKeyMismatch {
                id: record.id,
                expected: expected.iter().map(|s| s.to_string()).collect(),
                found: found.iter().map(|s| s.to_string()).collect(),
            });
        }
        let gold_label = match record.gold {
            None => None,
            Some(raw) => match task.key(&raw) {
                Some(k) => Some(k.clone()),
                None => {
                    return Err(TaskError::LabelNotInOptions {
                        id: record.id,
                        label: raw,
                    })
                }
            },
        };
        Ok(Instance {
            instance_id: record.id,
            task_id: task.task_id.clone(),
            question: record.question,
            choices,
            gold_label,
        })
    }

    pub(crate) fn to_record(&self) -> InstanceRecord {
        InstanceRecord {
            id: self.instance_id.clone(),
            question: self.question.clone(),
            choices: self
                .choices
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            gold: self.gold_label.as_ref().map(|k| k.to_string()),
        }
    }

    /// Choices in the task's option order.
    pub fn ordered_choices<'a>(&'a self, task: &'a TaskSpec) -> impl Iterator<Item = (&'a OptionKey, &'a str)> {
        task.option_keys
            .iter()
            .filter_map(move |k| self.choices.get(k).map(|text| (k, text.as_str())))
    }
}

/// Reads a task manifest plus its instances JSONL.
pub fn load_task(manifest: &Path, instances: &Path) -> Result<(TaskSpec, Vec<Instance>), TaskError> {
    let task = TaskSpec::load_manifest(manifest)?;
    let instances = load_instances(&task, instances)?;
    Ok((task, instances))
}

/// Reads `task.json` and `instances.jsonl` from a directory.
pub fn load_task_dir(dir: &Path) -> Result<(TaskSpec, Vec<Instance>), TaskError> {
    load_task(&dir.join("task.json"), &dir.join("instances.jsonl"))
}

pub fn load_instances(task: &TaskSpec, path: &Path) -> Result<Vec<Instance>, TaskError> {
    let file = fs::File::open(path).map_err(|source| TaskError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| TaskError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: InstanceRecord =
            serde_json::from_str(&line).map_err(|e| TaskError::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        let instance = Instance::from_record(task, record).map_err(|e| e.at_line(path, line_no))?;
        if !seen.insert(instance.instance_id.clone()) {
            return Err(TaskError::DuplicateInstance {
                path: path.to_path_buf(),
                line: line_no,
                id: instance.instance_id,
            });
        }
        out.push(instance);
    }
    Ok(out)
}

/// Canonical JSONL encoding of instances: one line each, sorted choice keys.
pub fn instances_to_jsonl(instances: &[Instance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(&inst.to_record()).expect("instance serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptExample {
    pub instance: Instance,
    pub rationale: String,
    pub label: OptionKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub task_id: String,
    pub examples: Vec<PromptExample>,
}

#[derive(Deserialize)]
struct RawPromptSet {
    task_id: String,
    examples: Vec<RawPromptExample>,
}

#[derive(Deserialize)]
struct RawPromptExample {
    id: String,
    question: String,
    choices: BTreeMap<String, String>,
    gold: String,
    rationale: String,
}

impl PromptSet {
    pub fn new(task: &TaskSpec, examples: Vec<PromptExample>) -> Result<Self, TaskError> {
        let set = PromptSet {
            task_id: task.task_id.clone(),
            examples,
        };
        set.validate(task)?;
        Ok(set)
    }

    pub fn validate(&self, task: &TaskSpec) -> Result<(), TaskError> {
        if self.task_id != task.task_id {
            return Err(TaskError::InvalidPromptSet(format!(
                "prompt set is for task {:?}, expected {:?}",
                self.task_id, task.task_id
            )));
        }
        if self.examples.is_empty() || self.examples.len() > MAX_PROMPT_EXAMPLES {
            return Err(TaskError::InvalidPromptSet(format!(
                "prompt set must hold 1..={MAX_PROMPT_EXAMPLES} examples, got {}",
                self.examples.len()
            )));
        }
        for ex in &self.examples {
            let id = &ex.instance.instance_id;
            if ex.instance.task_id != self.task_id {
                return Err(TaskError::InvalidPromptSet(format!(
                    "example {id:?} belongs to task {:?}",
                    ex.instance.task_id
                )));
            }
            if ex.instance.gold_label.as_ref() != Some(&ex.label) {
                return Err(TaskError::InvalidPromptSet(format!(
                    "example {id:?}: label does not equal the gold label"
                )));
            }
            if ex.rationale.trim().is_empty() {
                return Err(TaskError::InvalidPromptSet(format!("example {id:?}: empty rationale")));
            }
            if ex.rationale.contains(PROMPT_SEPARATOR) {
                return Err(TaskError::InvalidPromptSet(format!(
                    "example {id:?}: rationale contains the prompt separator"
                )));
            }
        }
        Ok(())
    }

    /// Loads a prompt set JSON file:
    /// `{"task_id", "examples": [{"id", "question", "choices", "gold", "rationale"}]}`.
    pub fn load(task: &TaskSpec, path: &Path) -> Result<Self, TaskError> {
        let text = fs::read_to_string(path).map_err(|source| TaskError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let raw: RawPromptSet = serde_json::from_str(&text)
            .map_err(|e| TaskError::InvalidPromptSet(format!("{}: {e}", path.display())))?;
        if raw.task_id != task.task_id {
            return Err(TaskError::InvalidPromptSet(format!(
                "{}: prompt set is for task {:?}, expected {:?}",
                path.display(),
                raw.task_id,
                task.task_id
            )));
        }
        let mut examples = Vec::with_capacity(raw.examples.len());
        for ex in raw.examples {
            let instance = Instance::from_record(
                task,
                InstanceRecord {
                    id: ex.id,
                    question: ex.question,
                    choices: ex.choices,
                    gold: Some(ex.gold),
                },
            )?;
            let label = instance.gold_label.clone().expect("gold set above");
            examples.push(PromptExample {
                instance,
                rationale: ex.rationale.trim().to_string(),
                label,
            });
        }
        PromptSet::new(task, examples)
    }
}
