use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::vocab::{SpanKind, Task, Vocabulary};
use crate::error::{bail, Result};

const DEFAULT_TEMPLATES: &str = include_str!("../../assets/templates.json");

/// Whether a phoneme/semantic condition keeps its frame-level durations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationMode {
    #[default]
    None,
    Kept,
    Stripped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slot {
    pub span: SpanKind,
    #[serde(default)]
    pub duration: DurationMode,
}

/// Ordered condition slots of one task; the target is always an audio span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskTemplate {
    pub task: Task,
    pub conditions: Vec<Slot>,
}

impl TaskTemplate {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        for slot in &self.conditions {
            if slot.span == SpanKind::Audio {
                bail!(Config, "task {}: the audio span is reserved for the target", self.task);
            }
            if let Some(r) = slot.span.range() {
                if !vocab.has_range(r) {
                    bail!(Config, "task {}: vocabulary lacks `{r}` for {} slot", self.task, slot.span.name());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TemplateRegistry {
    templates: Vec<TaskTemplate>,
    #[serde(skip)]
    index: HashMap<Task, usize>,
}

impl TemplateRegistry {
    pub fn new(templates: Vec<TaskTemplate>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, t) in templates.iter().enumerate() {
            if index.insert(t.task, i).is_some() {
                bail!(Config, "task {} defined twice", t.task);
            }
        }
        Ok(Self { templates, index })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct File {
            templates: Vec<TaskTemplate>,
        }
        let f: File = serde_json::from_str(text)?;
        Self::new(f.templates)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The shipped reconstruction covering all eleven tasks.
    pub fn default_registry() -> Self {
        Self::from_json(DEFAULT_TEMPLATES).expect("shipped templates parse")
    }

    pub fn get(&self, task: Task) -> Result<&TaskTemplate> {
        match self.index.get(&task) {
            Some(&i) => Ok(&self.templates[i]),
            None => bail!(Config, "no template for task {task}"),
        }
    }

    pub fn templates(&self) -> &[TaskTemplate] {
        &self.templates
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        self.templates.iter().try_for_each(|t| t.validate(vocab))
    }
}
