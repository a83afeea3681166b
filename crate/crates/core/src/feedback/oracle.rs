//! Synthetic scorer whose likelihoods are a declared function of latent keys.
//!
//! Every lexicon term belongs to one of `num_keys` keys arranged on a ring.
//! The key of a text span is the most frequent key among its lexicon terms.
//! The scorer behaves like a model that copies labels from its
//! demonstrations: a continuation whose key is at ring distance `δ` from a
//! demonstration's key receives weight `exp(−sharpness·δ)`, normalized over
//! all keys, and the distributions of all demonstrations are averaged. The
//! final separator-delimited segment of the context is the query and carries
//! no evidence.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scorer::{check_log_likelihoods, fingerprint_of, ScorePair, Scorer};
use crate::error::{Error, Result};
use crate::text::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub num_keys: u32,
    pub lexicon: BTreeMap<String, u32>,
    /// Text placed between demonstrations and before the query.
    pub separator: String,
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
    /// Likelihood of a continuation that carries no key.
    #[serde(default = "default_unkeyed")]
    pub unkeyed_likelihood: f64,
}

fn default_sharpness() -> f64 {
    1.0
}

fn default_unkeyed() -> f64 {
    1e-6
}

#[derive(Debug, Clone)]
pub struct OracleScorer {
    config: OracleConfig,
    fingerprint: String,
}

impl OracleScorer {
    pub fn new(config: OracleConfig) -> Result<Self> {
        if config.num_keys == 0 {
            return Err(Error::Config("oracle needs at least one key".to_string()));
        }
        if let Some((term, k)) = config.lexicon.iter().find(|(_, k)| **k >= config.num_keys) {
            return Err(Error::Config(format!(
                "oracle term {term:?} has key {k} >= num_keys"
            )));
        }
        if config.separator.is_empty() {
            return Err(Error::Config("oracle separator is empty".to_string()));
        }
        if !(config.unkeyed_likelihood > 0.0 && config.unkeyed_likelihood <= 1.0) {
            return Err(Error::Config("unkeyed_likelihood must be in (0, 1]".to_string()));
        }
        let serialized = serde_json::to_string(&config)?;
        let fingerprint = fingerprint_of(&["oracle", &serialized]);
        Ok(Self {
            config,
            fingerprint,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: OracleConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::new(config)
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    /// Majority key among the lexicon terms of `text`; ties go to the smaller key.
    pub fn key_of(&self, text: &str) -> Option<u32> {
        let mut votes = vec![0usize; self.config.num_keys as usize];
        for term in tokenize(text) {
            if let Some(k) = self.config.lexicon.get(&term) {
                votes[*k as usize] += 1;
            }
        }
        let best = votes.iter().copied().max().unwrap_or(0);
        if best == 0 {
            return None;
        }
        votes.iter().position(|v| *v == best).map(|k| k as u32)
    }

    pub fn ring_distance(&self, a: u32, b: u32) -> u32 {
        let d = a.abs_diff(b);
        d.min(self.config.num_keys - d)
    }

    fn copy_probability(&self, demo_key: Option<u32>, target_key: u32) -> f64 {
        let n = self.config.num_keys;
        match demo_key {
            None => 1.0 / f64::from(n),
            Some(k) => {
                let weight = |j: u32| (-self.config.sharpness * f64::from(self.ring_distance(j, k))).exp();
                // Sorted so that the normalizer is bit-identical for every k.
                let mut weights: Vec<f64> = (0..n).map(weight).collect();
                weights.sort_by(f64::total_cmp);
                let z: f64 = weights.iter().sum();
                weight(target_key) / z
            }
        }
    }

    fn likelihood(&self, context: &str, continuation: &str) -> f64 {
        let Some(target_key) = self.key_of(continuation) else {
            return self.config.unkeyed_likelihood;
        };
        let segments: Vec<&str> = context.split(self.config.separator.as_str()).collect();
        let demos = &segments[..segments.len().saturating_sub(1)];
        if demos.is_empty() {
            return 1.0 / f64::from(self.config.num_keys);
        }
        demos
            .iter()
            .map(|d| self.copy_probability(self.key_of(d), target_key))
            .sum::<f64>()
            / demos.len() as f64
    }

    /// Ground-truth usefulness of a demonstration with key `demo_key` for a
    /// query whose gold key is `query_key`: smaller is better.
    pub fn demo_distance(&self, query_key: u32, demo_key: Option<u32>) -> u32 {
        demo_key.map_or(self.config.num_keys, |k| self.ring_distance(query_key, k))
    }
}

impl Scorer for OracleScorer {
    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn log_likelihoods(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
        let out: Vec<f64> = pairs
            .iter()
            .map(|p| self.likelihood(&p.context, &p.continuation).ln().min(0.0))
            .collect();
        check_log_likelihoods(&out, pairs.len())?;
        Ok(out)
    }
}
