//! Temperature-smoothed multinomial task sampling.
//!
//! Task `i` is drawn with probability `q_i^α / Σ_j q_j^α`, where `q_i` is the
//! task's share of all training examples. `α = 1` reproduces raw proportions,
//! `α = 0` is uniform over tasks.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetRegistry, Example};
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSampler {
    pub probabilities: BTreeMap<String, f64>,
    pub alpha: f64,
}

/// One same-task batch.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub task_id: &'a str,
    pub examples: Vec<&'a Example>,
}

impl TaskSampler {
    pub fn from_sizes<'s>(
        sizes: impl IntoIterator<Item = (&'s str, usize)>,
        alpha: f64,
    ) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
        }
        let sizes: Vec<(&str, usize)> = sizes.into_iter().filter(|(_, n)| *n > 0).collect();
        if sizes.is_empty() {
            return Err(Error::Config(
                "no task with a non-empty train split".to_string(),
            ));
        }
        let total: usize = sizes.iter().map(|(_, n)| n).sum();
        let smoothed: Vec<f64> = sizes
            .iter()
            .map(|(_, n)| (*n as f64 / total as f64).powf(alpha))
            .collect();
        let norm: f64 = smoothed.iter().sum();
        let probabilities = sizes
            .iter()
            .zip(&smoothed)
            .map(|((task, _), w)| (task.to_string(), w / norm))
            .collect();
        Ok(Self {
            probabilities,
            alpha,
        })
    }

    pub fn probability(&self, task_id: &str) -> Option<f64> {
        self.probabilities.get(task_id).copied()
    }

    pub fn sample_task<R: Rng + ?Sized>(&self, rng: &mut R) -> &str {
        let weights: Vec<f64> = self.probabilities.values().copied().collect();
        let dist = WeightedIndex::new(&weights).expect("probabilities are positive");
        let i = dist.sample(rng);
        self.probabilities
            .keys()
            .nth(i)
            .map(String::as_str)
            .expect("index within task count")
    }
}

pub fn build_sampler(registry: &DatasetRegistry, alpha: f64) -> Result<TaskSampler> {
    let sizes: Vec<(&str, usize)> = registry
        .task_ids()
        .map(|t| (t, registry.train(t).len()))
        .collect();
    TaskSampler::from_sizes(sizes, alpha)
}

/// Draws a task, then `batch_size` of its training examples: uniformly
/// without replacement, or with replacement when the split is too small.
pub fn sample_batch<'a, R: Rng + ?Sized>(
    sampler: &'a TaskSampler,
    registry: &'a DatasetRegistry,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch<'a>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".to_string()));
    }
    let task_id = sampler.sample_task(rng);
    let pool = registry.train(task_id);
    if pool.is_empty() {
        return Err(Error::State(format!("task `{task_id}` has no training data")));
    }
    let examples = if pool.len() >= batch_size {
        index::sample(rng, pool.len(), batch_size)
            .into_iter()
            .map(|i| &pool[i])
            .collect()
    } else {
        (0..batch_size)
            .map(|_| &pool[rng.gen_range(0..pool.len())])
            .collect()
    };
    Ok(Batch { task_id, examples })
}
