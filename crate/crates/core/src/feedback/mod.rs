//! Language-model feedback: scoring candidate demonstrations by the
//! likelihood a scorer assigns to the gold output, and turning those scores
//! into list-wise ranks.
//!
//! Scores are kept in log space. A [`CandidateSet`] stores `ln s(z)` for each
//! candidate; ranks only depend on the order of scores, so this is equivalent
//! to ranking the raw likelihoods.

mod cache;
mod ngram;
mod oracle;
mod remote;
mod scorer;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{DatasetRegistry, Example, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::par;

pub use cache::{CacheKey, ScoreCache};
pub use ngram::NGramScorer;
pub use oracle::{OracleConfig, OracleScorer};
pub use remote::{HealthResponse, RemoteScorer, ScoreRequest, ScoreResponse};
pub use scorer::{check_log_likelihoods, FnScorer, ScorePair, Scorer};

use scorer::log_sum_exp;

/// Context used to score `candidate` as a demonstration for `query`: the
/// rendered demonstration, the task joiner, then the rendered query prefix.
pub fn scoring_context(spec: &TaskSpec, query: &Example, candidate: &Example) -> Result<String> {
    let demo = spec.render_demo(candidate)?;
    let prompt = spec.render_query(&query.input)?;
    Ok(format!("{demo}{}{prompt}", spec.template.joiner))
}

/// The continuation as sent to the scorer: separated from the context by a
/// single space unless either side already supplies whitespace.
pub fn continuation_for(context: &str, target: &str) -> String {
    let needs_space = !context.is_empty()
        && !context.ends_with(char::is_whitespace)
        && !target.starts_with(char::is_whitespace);
    if needs_space {
        format!(" {target}")
    } else {
        target.to_string()
    }
}

fn check_distinct(query: &Example, candidate: &Example) -> Result<()> {
    if query.task_id == candidate.task_id && query.example_id == candidate.example_id {
        return Err(Error::Contract(format!(
            "example `{}` cannot be scored as its own candidate",
            query.example_id
        )));
    }
    Ok(())
}

/// `ln p(y | z, x)` for a generation task.
pub fn log_score_gen(
    scorer: &dyn Scorer,
    query: &Example,
    candidate: &Example,
    spec: &TaskSpec,
) -> Result<f64> {
    if spec.kind != TaskKind::Generation {
        return Err(Error::Contract(format!(
            "task `{}` is not a generation task",
            spec.task_id
        )));
    }
    check_distinct(query, candidate)?;
    let context = scoring_context(spec, query, candidate)?;
    let continuation = continuation_for(&context, &query.target);
    scorer
        .log_likelihood(&context, &continuation)
        .map_err(|e| Error::scoring(&candidate.example_id, e.to_string()))
}

/// `s_gen(z) = p(y | z, x)`.
pub fn score_gen(
    scorer: &dyn Scorer,
    query: &Example,
    candidate: &Example,
    spec: &TaskSpec,
) -> Result<f64> {
    log_score_gen(scorer, query, candidate, spec).map(f64::exp)
}

/// `ln s_cls(z)`: the gold label's likelihood normalized over the label
/// space, computed with log-sum-exp.
pub fn log_score_cls(
    scorer: &dyn Scorer,
    query: &Example,
    candidate: &Example,
    spec: &TaskSpec,
) -> Result<f64> {
    if !spec.kind.has_label_space() {
        return Err(Error::Contract(format!(
            "task `{}` has no label space",
            spec.task_id
        )));
    }
    check_distinct(query, candidate)?;
    let labels = spec.label_space(query);
    if labels.is_empty() {
        return Err(Error::Data(format!(
            "example `{}` has an empty label space",
            query.example_id
        )));
    }
    let gold = labels.iter().position(|l| *l == query.target).ok_or_else(|| {
        Error::Data(format!(
            "gold target {:?} of `{}` is not in the label space",
            query.target, query.example_id
        ))
    })?;
    let context = scoring_context(spec, query, candidate)?;
    let pairs: Vec<ScorePair> = labels
        .iter()
        .map(|l| ScorePair::new(context.clone(), continuation_for(&context, l)))
        .collect();
    let ll = scorer
        .log_likelihoods(&pairs)
        .and_then(|v| check_log_likelihoods(&v, pairs.len()).map(|_| v))
        .map_err(|e| Error::scoring(&candidate.example_id, e.to_string()))?;
    let norm = log_sum_exp(&ll);
    if norm == f64::NEG_INFINITY {
        return Err(Error::scoring(
            &candidate.example_id,
            "all label likelihoods are zero; cannot normalize",
        ));
    }
    Ok(ll[gold] - norm)
}

/// `s_cls(z) = p(y | z, x) / Σ_{y'} p(y' | z, x)`.
pub fn score_cls(
    scorer: &dyn Scorer,
    query: &Example,
    candidate: &Example,
    spec: &TaskSpec,
) -> Result<f64> {
    log_score_cls(scorer, query, candidate, spec).map(f64::exp)
}

/// `ln s(z)` dispatched on the task kind.
pub fn log_score(
    scorer: &dyn Scorer,
    query: &Example,
    candidate: &Example,
    spec: &TaskSpec,
) -> Result<f64> {
    match spec.kind {
        TaskKind::Generation => log_score_gen(scorer, query, candidate, spec),
        TaskKind::Classification | TaskKind::MultiChoice => {
            log_score_cls(scorer, query, candidate, spec)
        }
    }
}

/// 1-based ranks: rank 1 is the highest score, ties go to the lower index.
pub fn rank_candidates(scores: &[f64]) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::Contract("cannot rank an empty list".to_string()));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::scoring(i.to_string(), "score is NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    for (r, i) in order.into_iter().enumerate() {
        ranks[i] = r + 1;
    }
    Ok(ranks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    #[serde(rename = "id")]
    pub candidate_id: String,
    /// `ln s(z)`; `-inf` is written as `null`.
    #[serde(serialize_with = "ser_score", deserialize_with = "de_score")]
    pub score: f64,
    pub rank: usize,
}

fn ser_score<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn de_score<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub query_id: String,
    pub task: String,
    pub iteration: usize,
    #[serde(rename = "candidates")]
    pub entries: Vec<ScoredCandidate>,
}

impl CandidateSet {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.candidate_id.as_str())
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    /// The rank-1 entry.
    pub fn best(&self) -> Option<&ScoredCandidate> {
        self.entries.iter().find(|e| e.rank == 1)
    }
}

/// Candidate sets of every training query for one mining iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateStore {
    pub iteration: usize,
    sets: BTreeMap<(String, String), CandidateSet>,
}

impl CandidateStore {
    pub fn new(iteration: usize) -> Self {
        Self {
            iteration,
            sets: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, set: CandidateSet) {
        self.sets
            .insert((set.task.clone(), set.query_id.clone()), set);
    }

    pub fn get(&self, task_id: &str, query_id: &str) -> Option<&CandidateSet> {
        self.sets.get(&(task_id.to_string(), query_id.to_string()))
    }

    pub fn sets(&self) -> impl Iterator<Item = &CandidateSet> {
        self.sets.values()
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for set in self.sets.values() {
            out.push_str(&serde_json::to_string(set).expect("candidate set serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, source: &str) -> Result<Self> {
        let mut store = Self::new(0);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let set: CandidateSet = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            store.iteration = set.iteration;
            store.insert(set);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, &path.display().to_string())
    }
}

struct Pending {
    set: CandidateSet,
    fresh: Vec<(CacheKey, f64)>,
}

fn score_pending(
    scorer: &dyn Scorer,
    fingerprint: &str,
    registry: &DatasetRegistry,
    query: &Example,
    ids: &[String],
    iteration: usize,
    cache: &ScoreCache,
) -> Result<Pending> {
    let spec = registry.task(&query.task_id)?;
    let mut seen = HashSet::new();
    let mut scores = Vec::with_capacity(ids.len());
    let mut fresh = Vec::new();
    for id in ids {
        if id == &query.example_id {
            return Err(Error::Contract(format!(
                "candidate list of `{id}` contains the query itself"
            )));
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::Contract(format!(
                "candidate `{id}` listed twice for query `{}`",
                query.example_id
            )));
        }
        let candidate = registry.get(&query.task_id, id).ok_or_else(|| {
            Error::scoring(id, format!("unknown example in task `{}`", query.task_id))
        })?;
        let key = CacheKey::new(&query.task_id, &query.example_id, id, fingerprint);
        let score = match cache.get(&key) {
            Some(s) => s,
            None => {
                let s = log_score(scorer, query, candidate, spec)?;
                fresh.push((key, s));
                s
            }
        };
        scores.push(score);
    }
    let ranks = rank_candidates(&scores)?;
    let entries = ids
        .iter()
        .zip(scores)
        .zip(ranks)
        .map(|((id, score), rank)| ScoredCandidate {
            candidate_id: id.clone(),
            score,
            rank,
        })
        .collect();
    Ok(Pending {
        set: CandidateSet {
            query_id: query.example_id.clone(),
            task: query.task_id.clone(),
            iteration,
            entries,
        },
        fresh,
    })
}

/// Scores and ranks one query's candidates. The cache is read first and
/// written only when the whole set succeeds.
pub fn score_candidate_set(
    scorer: &dyn Scorer,
    registry: &DatasetRegistry,
    query: &Example,
    ids: &[String],
    iteration: usize,
    cache: &ScoreCache,
) -> Result<CandidateSet> {
    let fingerprint = scorer.fingerprint();
    let pending = score_pending(scorer, &fingerprint, registry, query, ids, iteration, cache)?;
    cache.extend(pending.fresh);
    Ok(pending.set)
}

/// Scores many queries' candidate lists in parallel. Cache writes happen
/// afterwards, in input order.
pub fn score_candidate_sets(
    scorer: &dyn Scorer,
    registry: &DatasetRegistry,
    requests: &[(&Example, Vec<String>)],
    iteration: usize,
    cache: &ScoreCache,
) -> Result<Vec<CandidateSet>> {
    let fingerprint = scorer.fingerprint();
    let pending = par::try_map(requests, |(query, ids)| {
        score_pending(scorer, &fingerprint, registry, query, ids, iteration, cache)
    })?;
    let mut sets = Vec::with_capacity(pending.len());
    for p in pending {
        cache.extend(p.fresh);
        sets.push(p.set);
    }
    Ok(sets)
}

#[cfg(test)]
mod tests;
