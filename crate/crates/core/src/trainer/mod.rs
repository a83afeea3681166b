//! Listwise ranking training with iterative candidate mining.

mod loss;
mod mining;
mod objective;
mod optim;
mod run;

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_sampler, sample_batch, DatasetRegistry, Example};
use crate::encoder::{init_params, BiEncoderParams, Vocabulary, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::feedback::{rank_candidates, score_candidate_sets, CandidateSet, CandidateStore, ScoreCache, Scorer};
use crate::lexical::{Bm25Params, InitMode, LexicalPool};

pub use loss::{loss_inbatch, loss_rank, loss_total, pair_weight};
pub use mining::mine_candidates;
pub use objective::{objective, MicroBatch, ObjectiveValue, QueryList};
pub use optim::{warmup_lr, AdamWConfig, EncoderGrads, OptimizerState};
pub use run::RunWriter;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub l_sampled: usize,
    pub k_candidates: usize,
    pub iterations: usize,
    pub epochs_initial: usize,
    pub epochs_per_iteration: usize,
    pub seed: u64,
    pub dim: usize,
    pub weight_decay: f64,
    /// Keep at most this many training examples per task (seeded subset).
    pub max_train_examples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.8,
            alpha: 0.5,
            learning_rate: 1e-4,
            warmup_steps: 500,
            batch_size: 16,
            l_sampled: 8,
            k_candidates: 50,
            iterations: 3,
            epochs_initial: 30,
            epochs_per_iteration: 10,
            seed: 0,
            dim: DEFAULT_DIM,
            weight_decay: 0.0,
            max_train_examples: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail("lambda must lie in [0, 1]");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail("alpha must be a finite value >= 0");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be a finite value >= 0");
        }
        if self.batch_size == 0 || self.l_sampled == 0 || self.k_candidates == 0 || self.dim == 0 {
            return fail("batch_size, l_sampled, k_candidates and dim must be >= 1");
        }
        if self.l_sampled > self.k_candidates {
            return fail("l_sampled must not exceed k_candidates");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be a finite value >= 0");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    /// Optimizer steps in one epoch: enough batches to cover every
    /// training example once on average.
    pub fn steps_per_epoch(&self, registry: &DatasetRegistry) -> usize {
        let n: usize = registry.task_ids().map(|t| registry.train(t).len()).sum();
        n.div_ceil(self.batch_size).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss_total: f64,
    pub loss_rank: f64,
    pub loss_ib: f64,
}

/// Summary of one candidate store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub candidate_sets: usize,
    /// Mean over queries of the best candidate's log score.
    pub mean_best_log_score: f64,
    /// Fraction of queries whose rank-1 candidate appears in the previous
    /// iteration's list (absent for the first store).
    pub previous_best_recall: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub iterations: Vec<IterationStats>,
    pub wall_clock_seconds: f64,
}

/// Hooks called as training produces artifacts.
pub trait TrainObserver {
    fn on_candidates(&mut self, _store: &CandidateStore) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _iteration: usize, _params: &BiEncoderParams) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Random stream for optimizer step `step`.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64 + 1);
    rng
}

/// Draws up to `l` candidates per query, re-ranks each sample by its cached
/// scores and tokenizes the batch.
pub fn build_micro_batch(
    params: &BiEncoderParams,
    registry: &DatasetRegistry,
    store: &CandidateStore,
    batch: &[&Example],
    l: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MicroBatch> {
    let mut column_of: HashMap<(&str, &str), usize> = HashMap::new();
    let mut columns = Vec::new();
    let mut queries = Vec::with_capacity(batch.len());
    let mut picks: Vec<(Vec<usize>, Vec<usize>)> = Vec::with_capacity(batch.len());
    for query in batch {
        let spec = registry.task(&query.task_id)?;
        let set: &CandidateSet = store
            .get(&query.task_id, &query.example_id)
            .filter(|s| !s.entries.is_empty())
            .ok_or_else(|| {
                Error::State(format!(
                    "no scored candidates for query `{}` of task `{}`",
                    query.example_id, query.task_id
                ))
            })?;
        let mut sampled = index::sample(rng, set.entries.len(), l.min(set.entries.len())).into_vec();
        sampled.sort_unstable();
        let scores: Vec<f64> = sampled.iter().map(|&i| set.entries[i].score).collect();
        let ranks = rank_candidates(&scores)?;
        let mut cols = Vec::with_capacity(sampled.len());
        for &i in &sampled {
            let id = set.entries[i].candidate_id.as_str();
            let key = (query.task_id.as_str(), id);
            let c = match column_of.get(&key) {
                Some(&c) => c,
                None => {
                    let demo = registry.get(&query.task_id, id).ok_or_else(|| {
                        Error::State(format!("candidate `{id}` of `{}` is not in the registry", query.example_id))
                    })?;
                    columns.push(params.demo_ids(spec, demo)?);
                    column_of.insert(key, columns.len() - 1);
                    columns.len() - 1
                }
            };
            cols.push(c);
        }
        queries.push(params.query_ids(spec, &query.input));
        picks.push((cols, ranks));
    }
    let lists = batch
        .iter()
        .zip(picks)
        .map(|(query, (columns, ranks))| QueryList {
            columns,
            ranks,
            excluded: column_of
                .get(&(query.task_id.as_str(), query.example_id.as_str()))
                .copied(),
        })
        .collect();
    Ok(MicroBatch {
        queries,
        columns,
        lists,
    })
}

/// One optimizer update on `batch`. `step` sets the warmup position.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    params: &mut BiEncoderParams,
    optimizer: &mut OptimizerState,
    registry: &DatasetRegistry,
    store: &CandidateStore,
    batch: &[&Example],
    config: &TrainConfig,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StepRecord> {
    let micro = build_micro_batch(params, registry, store, batch, config.l_sampled, rng)?;
    let (value, grads) = objective(params, &micro, config.lambda)?;
    if !value.total.is_finite() {
        return Err(Error::State(format!("loss diverged at step {step}")));
    }
    let lr = warmup_lr(config.learning_rate, config.warmup_steps, step);
    optimizer.update(params, &grads, lr);
    Ok(StepRecord {
        step,
        loss_total: value.total,
        loss_rank: value.rank,
        loss_ib: value.inbatch,
    })
}

fn iteration_stats(store: &CandidateStore, previous: Option<&CandidateStore>) -> IterationStats {
    let n = store.len().max(1) as f64;
    let mean_best_log_score = store
        .sets()
        .filter_map(|s| s.best())
        .map(|b| b.score)
        .sum::<f64>()
        / n;
    let previous_best_recall = previous.map(|prev| {
        store
            .sets()
            .filter(|s| {
                let best = s.best().map(|b| b.candidate_id.as_str());
                prev.get(&s.task, &s.query_id)
                    .is_some_and(|p| p.ids().any(|id| Some(id) == best))
            })
            .count() as f64
            / n
    });
    IterationStats {
        iteration: store.iteration,
        candidate_sets: store.len(),
        mean_best_log_score,
        previous_best_recall,
    }
}

fn score_store(
    scorer: &dyn Scorer,
    registry: &DatasetRegistry,
    lists: Vec<(&Example, Vec<String>)>,
    iteration: usize,
    cache: &ScoreCache,
) -> Result<CandidateStore> {
    let mut store = CandidateStore::new(iteration);
    for set in score_candidate_sets(scorer, registry, &lists, iteration, cache)? {
        store.insert(set);
    }
    Ok(store)
}

/// Lexical top-K lists for every training example.
pub fn initial_candidates(
    registry: &DatasetRegistry,
    k: usize,
) -> Result<Vec<(&Example, Vec<String>)>> {
    let pool = LexicalPool::for_registry(registry, Bm25Params::default())?;
    let mut lists = Vec::new();
    for spec in registry.tasks() {
        let mode = InitMode::for_kind(spec.kind);
        for query in registry.train(&spec.task_id) {
            lists.push((query, pool.init_candidates(query, k, mode)?));
        }
    }
    Ok(lists)
}

/// Mined top-K lists for every training example.
pub fn mined_candidates<'a>(
    params: &BiEncoderParams,
    registry: &'a DatasetRegistry,
    k: usize,
) -> Result<Vec<(&'a Example, Vec<String>)>> {
    let mut lists = Vec::new();
    for task in registry.task_ids() {
        if registry.train(task).is_empty() {
            continue;
        }
        let train = registry.train(task);
        for (q, (_, ids)) in mine_candidates(params, registry, task, k)?.into_iter().enumerate() {
            lists.push((&train[q], ids));
        }
    }
    Ok(lists)
}

pub fn train(
    registry: &DatasetRegistry,
    scorer: &dyn Scorer,
    config: &TrainConfig,
) -> Result<(BiEncoderParams, TrainReport)> {
    train_with(registry, scorer, config, &mut ())
}

/// Initial lexical candidates, then `iterations + 1` training phases with
/// re-mining between phases. Candidate stores are numbered from 0 and the
/// checkpoint after phase `i` trains on store `i`.
pub fn train_with(
    registry: &DatasetRegistry,
    scorer: &dyn Scorer,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(BiEncoderParams, TrainReport)> {
    config.validate()?;
    let started = Instant::now();
    let sampler = build_sampler(registry, config.alpha)?;
    let vocab = Vocabulary::from_registry(registry)?;
    let mut params = init_params(vocab, config.dim, config.seed);
    let mut optimizer = OptimizerState::new(&params, config.adamw());
    let cache = ScoreCache::new();
    let mut report = TrainReport::default();

    let mut store = score_store(scorer, registry, initial_candidates(registry, config.k_candidates)?, 0, &cache)?;
    report.iterations.push(iteration_stats(&store, None));
    observer.on_candidates(&store)?;
    log::info!("scored initial candidates for {} queries", store.len());

    let steps_per_epoch = config.steps_per_epoch(registry);
    let mut step = 0;
    for phase in 0..=config.iterations {
        let epochs = if phase == 0 {
            config.epochs_initial
        } else {
            config.epochs_per_iteration
        };
        for _ in 0..epochs * steps_per_epoch {
            let mut rng = step_rng(config.seed, step);
            let batch = sample_batch(&sampler, registry, config.batch_size, &mut rng)?;
            let record = train_step(
                &mut params,
                &mut optimizer,
                registry,
                &store,
                &batch.examples,
                config,
                step,
                &mut rng,
            )?;
            report.steps.push(record);
            step += 1;
        }
        if let Some(last) = report.steps.last() {
            log::info!("phase {phase}: {step} steps, loss {:.6}", last.loss_total);
        }
        observer.on_checkpoint(phase, &params)?;
        if phase < config.iterations {
            let lists = mined_candidates(&params, registry, config.k_candidates)?;
            let next = score_store(scorer, registry, lists, phase + 1, &cache)?;
            report.iterations.push(iteration_stats(&next, Some(&store)));
            observer.on_candidates(&next)?;
            store = next;
        }
    }
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok((params, report))
}
