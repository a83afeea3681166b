//! `udr` command-line front end.
//!
//! Every command writes a manifest before doing any heavy work. Exit codes:
//! 0 success, 2 input error, 3 missing artifact, 4 internal error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetRegistry, Example, Split};
use crate::dense_index::DenseIndex;
use crate::encoder::BiEncoderParams;
use crate::error::{Error, Result};
use crate::feedback::{NGramScorer, OracleScorer, RemoteScorer, Scorer};
use crate::inference::{
    bm25_ranking, evaluate, plan_prompt, predict_label, random_ranking, DenseRetriever, EvalResult,
    Metric, OrderStrategy,
};
use crate::lexical::{Bm25Params, InitMode, LexicalPool};
use crate::par;
use crate::synthetic::{SyntheticConfig, SyntheticFixture};
use crate::trainer::{train_with, RunWriter, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "udr", version, about = "Demonstration retrieval trained from language-model feedback")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a registry and data files and write canonical copies.
    Prepare(PrepareArgs),
    /// Train the bi-encoder.
    Train(TrainArgs),
    /// Encode training pools into dense indexes.
    Index(IndexArgs),
    /// Build prompts for a split.
    Retrieve(RetrieveArgs),
    /// Score prompts or predictions against gold targets.
    Evaluate(EvaluateArgs),
    /// Retrieve and evaluate in one go.
    Baseline(BaselineArgs),
    /// Write the synthetic oracle fixture.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Task registry (JSON).
    #[arg(long)]
    pub registry: PathBuf,
    /// Example file as `[split:]path` (split defaults to train), or a
    /// directory holding train/dev/test.jsonl.
    #[arg(long = "data", value_name = "[SPLIT:]PATH")]
    pub data: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerKind {
    Oracle,
    Ngram,
    Remote,
}

#[derive(Debug, Clone, Args)]
pub struct ScorerArgs {
    #[arg(long, value_enum, default_value = "ngram")]
    pub scorer: ScorerKind,
    /// Oracle configuration (JSON) for `--scorer oracle`.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Base URL of the scoring service for `--scorer remote`.
    #[arg(long)]
    pub remote_url: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Training configuration (JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CheckpointArgs {
    /// Checkpoint file.
    #[arg(long, conflicts_with = "run")]
    pub checkpoint: Option<PathBuf>,
    /// Training run directory; its latest checkpoint is used.
    #[arg(long)]
    pub run: Option<PathBuf>,
}

impl CheckpointArgs {
    fn path(&self) -> Result<PathBuf> {
        match (&self.checkpoint, &self.run) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(dir)) => RunWriter::latest_checkpoint(dir),
            (None, None) => Err(Error::Config("pass --checkpoint or --run".to_string())),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub checkpoint: CheckpointArgs,
    /// Only these tasks (default: every task with training data).
    #[arg(long)]
    pub task: Vec<String>,
    /// Directory receiving `<task>.udx` files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RetrieverKind {
    Random,
    Bm25,
    Dense,
}

#[derive(Debug, Clone, Args)]
pub struct RetrievalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "dense")]
    pub retriever: RetrieverKind,
    #[command(flatten)]
    pub checkpoint: CheckpointArgs,
    /// Directory of `<task>.udx` indexes for the dense retriever.
    #[arg(long)]
    pub index_dir: Option<PathBuf>,
    /// Split whose inputs are the queries.
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Candidates retrieved before selection.
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long, default_value = "ascending")]
    pub order: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Only these tasks (default: every task with queries).
    #[arg(long)]
    pub task: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Output JSONL file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Prompts written by `retrieve`.
    #[arg(long)]
    pub plans: PathBuf,
    /// Generated outputs for generation tasks: JSONL of
    /// `{"task", "query", "prediction"}`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Directory receiving `plans.jsonl` and `eval.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Record of one invocation, sufficient to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub toolkit_version: String,
    pub started_at: u64,
    pub finished_at: Option<u64>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    fn begin(
        command: &str,
        config: serde_json::Value,
        inputs: Vec<String>,
        outputs: Vec<String>,
        seed: Option<u64>,
        path: PathBuf,
    ) -> Result<ManifestHandle> {
        let manifest = RunManifest {
            command: command.to_string(),
            config,
            inputs,
            outputs,
            seed,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now(),
            finished_at: None,
        };
        write_json(&path, &manifest)?;
        Ok(ManifestHandle { manifest, path })
    }
}

struct ManifestHandle {
    manifest: RunManifest,
    path: PathBuf,
}

impl ManifestHandle {
    fn finish(mut self) -> Result<()> {
        self.manifest.finished_at = Some(now());
        write_json(&self.path, &self.manifest)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// `(split, path)` pairs named by a `--data` value.
pub fn data_sources(value: &str) -> Result<Vec<(Split, PathBuf)>> {
    if let Some((prefix, rest)) = value.split_once(':') {
        if let Ok(split) = prefix.parse::<Split>() {
            return Ok(vec![(split, PathBuf::from(rest))]);
        }
    }
    let path = PathBuf::from(value);
    if path.is_dir() {
        let found: Vec<(Split, PathBuf)> = Split::ALL
            .iter()
            .map(|s| (*s, path.join(format!("{s}.jsonl"))))
            .filter(|(_, p)| p.is_file())
            .collect();
        if found.is_empty() {
            return Err(Error::MissingArtifact(path.join("train.jsonl")));
        }
        return Ok(found);
    }
    Ok(vec![(Split::Train, path)])
}

impl DataArgs {
    fn sources(&self) -> Result<Vec<(Split, PathBuf)>> {
        let mut out = Vec::new();
        for d in &self.data {
            out.extend(data_sources(d)?);
        }
        Ok(out)
    }

    fn input_paths(&self) -> Vec<String> {
        let mut v = vec![self.registry.display().to_string()];
        v.extend(self.data.iter().cloned());
        v
    }

    pub fn load(&self) -> Result<DatasetRegistry> {
        let mut registry = DatasetRegistry::load_registry(&self.registry)?;
        for (split, path) in self.sources()? {
            let n = registry.load_jsonl(&path, split)?;
            log::info!("loaded {n} {split} examples from {}", path.display());
        }
        Ok(registry)
    }
}

impl ScorerArgs {
    pub fn build(&self, registry: &DatasetRegistry) -> Result<Box<dyn Scorer>> {
        match self.scorer {
            ScorerKind::Oracle => {
                let path = self
                    .oracle
                    .as_ref()
                    .ok_or_else(|| Error::Config("--scorer oracle needs --oracle".to_string()))?;
                if !path.exists() {
                    return Err(Error::MissingArtifact(path.clone()));
                }
                Ok(Box::new(OracleScorer::load(path)?))
            }
            ScorerKind::Ngram => Ok(Box::new(NGramScorer::fit_registry(registry)?)),
            ScorerKind::Remote => {
                let url = self
                    .remote_url
                    .as_ref()
                    .ok_or_else(|| Error::Config("--scorer remote needs --remote-url".to_string()))?;
                Ok(Box::new(RemoteScorer::connect(url)?))
            }
        }
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "scorer": format!("{:?}", self.scorer).to_lowercase(),
            "oracle": self.oracle.as_ref().map(|p| p.display().to_string()),
            "remote_url": self.remote_url,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PrepareReport {
    tasks: BTreeMap<String, BTreeMap<String, usize>>,
}

fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    let manifest = RunManifest::begin(
        "prepare",
        serde_json::Value::Null,
        args.data.input_paths(),
        vec![args.out.display().to_string()],
        None,
        args.out.join("manifest.json"),
    )?;
    let mut registry = DatasetRegistry::load_registry(&args.data.registry)?;
    for (split, path) in args.data.sources()? {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let source = path.display().to_string();
        let mut errors = registry.diagnose_jsonl_str(&text, &source, split);
        if !errors.is_empty() {
            for e in &errors {
                eprintln!("{e}");
            }
            return Err(errors.remove(0));
        }
        registry.load_jsonl_str(&text, &source, split)?;
    }
    fs::write(args.out.join("registry.json"), registry.registry_json())
        .map_err(|e| Error::io(args.out.join("registry.json"), e))?;
    let mut report = PrepareReport {
        tasks: BTreeMap::new(),
    };
    for split in Split::ALL {
        if registry.len(split) > 0 {
            registry.write_split(split, &args.out.join(format!("{split}.jsonl")))?;
        }
        for task in registry.task_ids() {
            report
                .tasks
                .entry(task.to_string())
                .or_default()
                .insert(split.to_string(), registry.examples(task, split).len());
        }
    }
    write_json(&args.out.join("report.json"), &report)?;
    manifest.finish()
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::MissingArtifact(path.clone()));
            }
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(it) = args.iterations {
        config.iterations = it;
    }
    config.validate()?;
    let mut inputs = args.data.input_paths();
    inputs.extend(args.config.iter().map(|p| p.display().to_string()));
    let mut described = serde_json::to_value(&config)?;
    described["scorer"] = args.scorer.describe();
    let manifest = RunManifest::begin(
        "train",
        described,
        inputs,
        vec![args.out.display().to_string()],
        Some(config.seed),
        args.out.join("manifest.json"),
    )?;
    let mut registry = args.data.load()?;
    if let Some(cap) = config.max_train_examples {
        registry.cap_train(cap, config.seed);
    }
    let scorer = args.scorer.build(&registry)?;
    let mut writer = RunWriter::create(&args.out, &config)?;
    let (_, report) = train_with(&registry, scorer.as_ref(), &config, &mut writer)?;
    writer.write_report(&report)?;
    manifest.finish()
}

fn load_checkpoint(args: &CheckpointArgs) -> Result<(PathBuf, BiEncoderParams)> {
    let path = args.path()?;
    let params = BiEncoderParams::load(&path)?;
    Ok((path, params))
}

fn cmd_index(args: &IndexArgs) -> Result<()> {
    let (ckpt, params) = load_checkpoint(&args.checkpoint)?;
    let mut inputs = args.data.input_paths();
    inputs.push(ckpt.display().to_string());
    let manifest = RunManifest::begin(
        "index",
        serde_json::json!({ "tasks": args.task }),
        inputs,
        vec![args.out.display().to_string()],
        None,
        args.out.join("manifest.json"),
    )?;
    let registry = args.data.load()?;
    let tasks: Vec<String> = if args.task.is_empty() {
        registry
            .task_ids()
            .filter(|t| !registry.train(t).is_empty())
            .map(String::from)
            .collect()
    } else {
        args.task.clone()
    };
    for task in &tasks {
        let index = DenseIndex::build(&params, &registry, task)?;
        index.save(&args.out.join(format!("{task}.udx")))?;
    }
    manifest.finish()
}

/// One line of `retrieve` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub task: String,
    pub query: String,
    pub demos: Vec<String>,
    pub order: String,
    pub prompt: String,
    pub token_cost: usize,
}

enum Ranker {
    Random(u64),
    Bm25(LexicalPool),
    Dense(BiEncoderParams, BTreeMap<String, DenseIndex>),
}

impl RetrievalArgs {
    fn tasks(&self, registry: &DatasetRegistry) -> Result<Vec<String>> {
        if self.task.is_empty() {
            return Ok(registry
                .task_ids()
                .filter(|t| !registry.examples(t, self.split).is_empty())
                .map(String::from)
                .collect());
        }
        for t in &self.task {
            registry.task(t)?;
        }
        Ok(self.task.clone())
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "retriever": format!("{:?}", self.retriever).to_lowercase(),
            "split": self.split.to_string(),
            "k": self.k,
            "order": self.order,
            "tasks": self.task,
            "index_dir": self.index_dir.as_ref().map(|p| p.display().to_string()),
        })
    }

    fn ranker(&self, registry: &DatasetRegistry, tasks: &[String]) -> Result<Ranker> {
        match self.retriever {
            RetrieverKind::Random => Ok(Ranker::Random(self.seed)),
            RetrieverKind::Bm25 => {
                let mut pool = LexicalPool::new();
                for t in tasks {
                    pool.index_task(registry, t, InitMode::ByInput, Bm25Params::default())?;
                }
                Ok(Ranker::Bm25(pool))
            }
            RetrieverKind::Dense => {
                let (_, params) = load_checkpoint(&self.checkpoint)?;
                let dir = self
                    .index_dir
                    .as_ref()
                    .ok_or_else(|| Error::Config("--retriever dense needs --index-dir".to_string()))?;
                let mut indexes = BTreeMap::new();
                for t in tasks {
                    let index = DenseIndex::load(&dir.join(format!("{t}.udx")))?;
                    DenseRetriever::new(&params, &index)?;
                    indexes.insert(t.clone(), index);
                }
                Ok(Ranker::Dense(params, indexes))
            }
        }
    }

    /// Prompt plans for every query of the selected split and tasks.
    pub fn plans(&self, registry: &DatasetRegistry) -> Result<Vec<PlanRecord>> {
        if self.k == 0 {
            return Err(Error::Config("--k must be >= 1".to_string()));
        }
        let order = OrderStrategy::parse(&self.order, self.seed)?;
        let tasks = self.tasks(registry)?;
        let ranker = self.ranker(registry, &tasks)?;
        let mut out = Vec::new();
        for task in &tasks {
            let spec = registry.task(task)?;
            let pool = registry.train(task);
            let dense = match &ranker {
                Ranker::Dense(params, indexes) => Some(DenseRetriever::new(params, &indexes[task])?),
                _ => None,
            };
            let queries = registry.examples(task, self.split);
            let plans = par::try_map(queries, |q: &Example| -> Result<PlanRecord> {
                let ranked = match (&ranker, &dense) {
                    (Ranker::Random(seed), _) => random_ranking(pool, self.k, *seed, &q.example_id),
                    (Ranker::Bm25(lex), _) => {
                        let index = lex
                            .index(task, InitMode::ByInput)
                            .ok_or_else(|| Error::State(format!("no lexical index for `{task}`")))?;
                        bm25_ranking(index, &q.input, self.k)
                    }
                    (Ranker::Dense(..), Some(r)) => r.retrieve(spec, &q.input, self.k)?,
                    (Ranker::Dense(..), None) => unreachable!("dense retriever built above"),
                };
                let demos: Vec<&Example> = ranked
                    .iter()
                    .filter(|(id, _)| id != &q.example_id)
                    .map(|(id, _)| {
                        registry
                            .get(task, id)
                            .ok_or_else(|| Error::State(format!("index entry `{id}` is not in task `{task}`")))
                    })
                    .collect::<Result<_>>()?;
                let plan = plan_prompt(&demos, spec, &q.input, order)?;
                Ok(PlanRecord {
                    task: task.clone(),
                    query: q.example_id.clone(),
                    demos: plan.demonstrations,
                    order: plan.order_strategy.to_string(),
                    prompt: plan.rendered_prompt,
                    token_cost: plan.token_cost,
                })
            })?;
            out.extend(plans);
        }
        Ok(out)
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn cmd_retrieve(args: &RetrieveArgs) -> Result<()> {
    let manifest = RunManifest::begin(
        "retrieve",
        args.retrieval.describe(),
        args.retrieval.data.input_paths(),
        vec![args.out.display().to_string()],
        Some(args.retrieval.seed),
        sidecar(&args.out),
    )?;
    let registry = args.retrieval.data.load()?;
    let plans = args.retrieval.plans(&registry)?;
    write_jsonl(&args.out, &plans)?;
    manifest.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Prediction {
    task: String,
    query: String,
    prediction: String,
}

/// Per-task and pooled evaluation results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: BTreeMap<String, EvalResult>,
    /// Tasks with no predictions available (generation without a
    /// predictions file).
    pub skipped: Vec<String>,
}

/// Predicts labels of classification plans with `scorer`, takes generation
/// outputs from `predictions`, and scores both.
pub fn evaluate_plans(
    registry: &DatasetRegistry,
    plans: &[PlanRecord],
    scorer: Option<&dyn Scorer>,
    predictions: &BTreeMap<(String, String), String>,
) -> Result<EvalReport> {
    let mut by_task: BTreeMap<&str, Vec<&PlanRecord>> = BTreeMap::new();
    for p in plans {
        by_task.entry(p.task.as_str()).or_default().push(p);
    }
    let mut report = EvalReport {
        tasks: BTreeMap::new(),
        skipped: Vec::new(),
    };
    for (task, rows) in by_task {
        let spec = registry.task(task)?;
        let golds: Vec<Example> = rows
            .iter()
            .map(|p| {
                registry
                    .get(task, &p.query)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("plan for unknown example `{}` of `{task}`", p.query)))
            })
            .collect::<Result<_>>()?;
        let preds: Vec<String> = if spec.kind.has_label_space() {
            let scorer = scorer.ok_or_else(|| Error::Config("classification evaluation needs a scorer".to_string()))?;
            let pairs: Vec<(&PlanRecord, &Example)> = rows.iter().copied().zip(&golds).collect();
            par::try_map(&pairs, |(p, g)| predict_label(scorer, &p.prompt, spec.label_space(g)))?
        } else {
            let found: Option<Vec<String>> = rows
                .iter()
                .map(|p| predictions.get(&(task.to_string(), p.query.clone())).cloned())
                .collect();
            match found {
                Some(v) => v,
                None => {
                    report.skipped.push(task.to_string());
                    continue;
                }
            }
        };
        let result = evaluate(&preds, &golds, Metric::for_kind(spec.kind))?;
        report.tasks.insert(task.to_string(), result);
    }
    Ok(report)
}

fn load_predictions(path: Option<&PathBuf>) -> Result<BTreeMap<(String, String), String>> {
    let Some(path) = path else {
        return Ok(BTreeMap::new());
    };
    Ok(read_jsonl::<Prediction>(path)?
        .into_iter()
        .map(|p| ((p.task, p.query), p.prediction))
        .collect())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut inputs = args.data.input_paths();
    inputs.push(args.plans.display().to_string());
    inputs.extend(args.predictions.iter().map(|p| p.display().to_string()));
    let manifest = RunManifest::begin(
        "evaluate",
        args.scorer.describe(),
        inputs,
        vec![args.out.display().to_string()],
        None,
        sidecar(&args.out),
    )?;
    let registry = args.data.load()?;
    let plans: Vec<PlanRecord> = read_jsonl(&args.plans)?;
    let predictions = load_predictions(args.predictions.as_ref())?;
    let needs_scorer = plans
        .iter()
        .any(|p| registry.task(&p.task).map(|s| s.kind.has_label_space()).unwrap_or(false));
    let scorer = if needs_scorer {
        Some(args.scorer.build(&registry)?)
    } else {
        None
    };
    let report = evaluate_plans(&registry, &plans, scorer.as_deref(), &predictions)?;
    write_json(&args.out, &report)?;
    manifest.finish()
}

fn cmd_baseline(args: &BaselineArgs) -> Result<()> {
    let mut config = args.retrieval.describe();
    config["scorer"] = args.scorer.describe();
    let manifest = RunManifest::begin(
        "baseline",
        config,
        args.retrieval.data.input_paths(),
        vec![args.out.display().to_string()],
        Some(args.retrieval.seed),
        args.out.join("manifest.json"),
    )?;
    let registry = args.retrieval.data.load()?;
    let plans = args.retrieval.plans(&registry)?;
    write_jsonl(&args.out.join("plans.jsonl"), &plans)?;
    let scorer = args.scorer.build(&registry)?;
    let report = evaluate_plans(&registry, &plans, Some(scorer.as_ref()), &BTreeMap::new())?;
    write_json(&args.out.join("eval.json"), &report)?;
    manifest.finish()
}

fn cmd_fixture(args: &FixtureArgs) -> Result<()> {
    let mut config = SyntheticConfig::default();
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let fixture = SyntheticFixture::generate(&config)?;
    fixture.write(&args.out)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a),
        Command::Index(a) => cmd_index(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Fixture(a) => cmd_fixture(a),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("UDR_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
