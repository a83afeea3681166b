//! Tasks, examples, dataset I/O and multi-task batch sampling.

mod sampler;
mod template;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use sampler::{build_sampler, sample_batch, Batch, TaskSampler, DEFAULT_ALPHA};
pub use template::TemplateSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    MultiChoice,
    Generation,
}

impl TaskKind {
    /// Classification and multi-choice tasks are scored against a label space.
    pub fn has_label_space(self) -> bool {
        !matches!(self, TaskKind::Generation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub kind: TaskKind,
    pub instruction: String,
    #[serde(default)]
    pub verbalizers: Vec<String>,
    pub template: TemplateSpec,
    /// Reserved length of the generated target, in toolkit tokens.
    pub max_target_len: usize,
    /// Maximal prompt length, in toolkit tokens.
    pub context_budget: usize,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let id = &self.task_id;
        if id.is_empty() {
            return Err(Error::Registry("empty task_id".to_string()));
        }
        self.template
            .validate()
            .map_err(|e| Error::Registry(format!("task `{id}`: {e}")))?;
        match self.kind {
            TaskKind::Classification => {
                if self.verbalizers.is_empty() {
                    return Err(Error::Registry(format!(
                        "classification task `{id}` has no verbalizers"
                    )));
                }
                let mut seen = std::collections::HashSet::new();
                if let Some(dup) = self.verbalizers.iter().find(|v| !seen.insert(*v)) {
                    return Err(Error::Registry(format!(
                        "task `{id}` repeats verbalizer {dup:?}"
                    )));
                }
            }
            TaskKind::Generation if self.max_target_len == 0 => {
                return Err(Error::Registry(format!(
                    "generation task `{id}` needs max_target_len >= 1"
                )));
            }
            _ => {}
        }
        if self.context_budget < self.max_target_len + 1 {
            return Err(Error::Registry(format!(
                "task `{id}`: context_budget {} < max_target_len + 1",
                self.context_budget
            )));
        }
        Ok(())
    }

    pub fn render_demo(&self, example: &Example) -> Result<String> {
        self.template.render_demo(&example.input, &example.target)
    }

    pub fn render_query(&self, input: &str) -> Result<String> {
        self.template.render_query(input)
    }

    /// Label space used for normalized scoring: the example's choices for
    /// multi-choice tasks, the verbalizers otherwise.
    pub fn label_space<'a>(&'a self, example: &'a Example) -> &'a [String] {
        match (self.kind, &example.choices) {
            (TaskKind::MultiChoice, Some(choices)) => choices,
            _ => &self.verbalizers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Example {
    pub task_id: String,
    pub example_id: String,
    pub input: String,
    pub target: String,
    pub choices: Option<Vec<String>>,
}

impl Example {
    pub fn new(
        task_id: impl Into<String>,
        example_id: impl Into<String>,
        input: impl Into<String>,
        target: impl Into<String>,
    ) -> Self {
        Self {
            task_id: task_id.into(),
            example_id: example_id.into(),
            input: input.into(),
            target: target.into(),
            choices: None,
        }
    }

    pub fn with_choices(mut self, choices: Vec<String>) -> Self {
        self.choices = Some(choices);
        self
    }
}

/// On-disk JSONL form of an [`Example`]. Field order is the canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleRecord {
    pub task: String,
    pub id: String,
    pub input: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

impl From<ExampleRecord> for Example {
    fn from(r: ExampleRecord) -> Self {
        Example {
            task_id: r.task,
            example_id: r.id,
            input: r.input,
            target: r.target,
            choices: r.choices,
        }
    }
}

impl From<&Example> for ExampleRecord {
    fn from(e: &Example) -> Self {
        ExampleRecord {
            task: e.task_id.clone(),
            id: e.example_id.clone(),
            input: e.input.clone(),
            target: e.target.clone(),
            choices: e.choices.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegistryFile {
    tasks: Vec<TaskSpec>,
}

/// Registered tasks and their split data. Immutable once loading is done.
#[derive(Debug, Clone, Default)]
pub struct DatasetRegistry {
    tasks: BTreeMap<String, TaskSpec>,
    splits: BTreeMap<(String, Split), Vec<Example>>,
    locations: HashMap<(String, String), (Split, usize)>,
}

const EMPTY: &[Example] = &[];

impl DatasetRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tasks(tasks: impl IntoIterator<Item = TaskSpec>) -> Result<Self> {
        let mut reg = Self::new();
        for t in tasks {
            reg.add_task(t)?;
        }
        Ok(reg)
    }

    /// Parses a registry document: `{"tasks": [...]}`.
    pub fn from_registry_json(text: &str) -> Result<Self> {
        let file: RegistryFile =
            serde_json::from_str(text).map_err(|e| Error::Registry(format!("invalid registry: {e}")))?;
        Self::from_tasks(file.tasks)
    }

    pub fn load_registry(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_registry_json(&text)
    }

    pub fn registry_json(&self) -> String {
        let file = RegistryFile {
            tasks: self.tasks.values().cloned().collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("registry serializes");
        s.push('\n');
        s
    }

    pub fn add_task(&mut self, spec: TaskSpec) -> Result<()> {
        spec.validate()?;
        if self.tasks.contains_key(&spec.task_id) {
            return Err(Error::Registry(format!(
                "duplicate task_id `{}`",
                spec.task_id
            )));
        }
        self.tasks.insert(spec.task_id.clone(), spec);
        Ok(())
    }

    pub fn add_example(&mut self, split: Split, example: Example) -> Result<()> {
        let spec = self.tasks.get(&example.task_id).ok_or_else(|| {
            Error::Registry(format!("unknown task_id `{}`", example.task_id))
        })?;
        if example.input.trim().is_empty() {
            return Err(Error::Data(format!(
                "example `{}` has an empty input",
                example.example_id
            )));
        }
        if spec.kind == TaskKind::MultiChoice {
            let ok = example
                .choices
                .as_ref()
                .is_some_and(|c| c.contains(&example.target));
            if !ok {
                return Err(Error::Data(format!(
                    "multi-choice example `{}` target is not among its choices",
                    example.example_id
                )));
            }
        }
        let key = (example.task_id.clone(), example.example_id.clone());
        if self.locations.contains_key(&key) {
            return Err(Error::Data(format!(
                "duplicate example id `{}` in task `{}`",
                key.1, key.0
            )));
        }
        let list = self.splits.entry((key.0.clone(), split)).or_default();
        self.locations.insert(key, (split, list.len()));
        list.push(example);
        Ok(())
    }

    fn stage_jsonl(&self, text: &str, source: &str, split: Split, all: bool) -> (Self, usize, Vec<Error>) {
        let mut staged = self.clone();
        let mut count = 0;
        let mut errors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = i + 1;
            let added = serde_json::from_str::<ExampleRecord>(line)
                .map_err(|e| Error::Parse {
                    path: source.to_string(),
                    line: line_no,
                    message: e.to_string(),
                })
                .and_then(|record| {
                    staged.add_example(split, record.into()).map_err(|e| match e {
                        Error::Registry(m) => Error::Registry(format!("{source}:{line_no}: {m}")),
                        Error::Data(m) => Error::Data(format!("{source}:{line_no}: {m}")),
                        other => other,
                    })
                });
            match added {
                Ok(()) => count += 1,
                Err(e) => {
                    errors.push(e);
                    if !all {
                        break;
                    }
                }
            }
        }
        (staged, count, errors)
    }

    /// Loads JSONL records from `text` into `split`. Errors carry the 1-based
    /// line number; nothing is added when any line fails.
    pub fn load_jsonl_str(&mut self, text: &str, source: &str, split: Split) -> Result<usize> {
        let (staged, count, mut errors) = self.stage_jsonl(text, source, split, false);
        if let Some(e) = errors.pop() {
            return Err(e);
        }
        *self = staged;
        Ok(count)
    }

    /// Every failing record of `text`, without modifying the registry.
    pub fn diagnose_jsonl_str(&self, text: &str, source: &str, split: Split) -> Vec<Error> {
        self.stage_jsonl(text, source, split, true).2
    }

    pub fn load_jsonl(&mut self, path: &Path, split: Split) -> Result<usize> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        self.load_jsonl_str(&text, &path.display().to_string(), split)
    }

    /// Canonical JSONL for one split across all tasks (task order, then
    /// insertion order).
    pub fn split_jsonl(&self, split: Split) -> String {
        let mut out = String::new();
        for task in self.tasks.keys() {
            for ex in self.examples(task, split) {
                out.push_str(&serde_json::to_string(&ExampleRecord::from(ex)).expect("record"));
                out.push('\n');
            }
        }
        out
    }

    pub fn write_split(&self, split: Split, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.split_jsonl(split).as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn task(&self, task_id: &str) -> Result<&TaskSpec> {
        self.tasks
            .get(task_id)
            .ok_or_else(|| Error::Registry(format!("unknown task_id `{task_id}`")))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.values()
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.tasks.keys().map(String::as_str)
    }

    pub fn examples(&self, task_id: &str, split: Split) -> &[Example] {
        self.splits
            .get(&(task_id.to_string(), split))
            .map_or(EMPTY, Vec::as_slice)
    }

    pub fn train(&self, task_id: &str) -> &[Example] {
        self.examples(task_id, Split::Train)
    }

    pub fn get(&self, task_id: &str, example_id: &str) -> Option<&Example> {
        let (split, i) = self
            .locations
            .get(&(task_id.to_string(), example_id.to_string()))?;
        self.splits.get(&(task_id.to_string(), *split)).map(|v| &v[*i])
    }

    pub fn split_of(&self, task_id: &str, example_id: &str) -> Option<Split> {
        self.locations
            .get(&(task_id.to_string(), example_id.to_string()))
            .map(|(s, _)| *s)
    }

    pub fn len(&self, split: Split) -> usize {
        self.tasks.keys().map(|t| self.examples(t, split).len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Keeps a fixed, seeded random subset of at most `cap` training examples
    /// per task (original order preserved). Other splits are untouched.
    pub fn cap_train(&mut self, cap: usize, seed: u64) {
        let task_ids: Vec<String> = self.tasks.keys().cloned().collect();
        for task in task_ids {
            let key = (task.clone(), Split::Train);
            let Some(list) = self.splits.get_mut(&key) else {
                continue;
            };
            if list.len() <= cap {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(task.as_bytes()));
            let mut keep = index::sample(&mut rng, list.len(), cap).into_vec();
            keep.sort_unstable();
            let kept: Vec<Example> = keep.into_iter().map(|i| list[i].clone()).collect();
            for ex in list.iter() {
                self.locations
                    .remove(&(ex.task_id.clone(), ex.example_id.clone()));
            }
            for (i, ex) in kept.iter().enumerate() {
                self.locations.insert(
                    (ex.task_id.clone(), ex.example_id.clone()),
                    (Split::Train, i),
                );
            }
            *list = kept;
        }
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3)
    })
}
