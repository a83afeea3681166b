use std::collections::HashMap;
use std::sync::RwLock;

/// Identifies one scored (query, candidate) pair under one scorer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub task_id: String,
    pub query_id: String,
    pub candidate_id: String,
    pub scorer_fingerprint: String,
}

impl CacheKey {
    pub fn new(task_id: &str, query_id: &str, candidate_id: &str, fingerprint: &str) -> Self {
        Self {
            task_id: task_id.to_string(),
            query_id: query_id.to_string(),
            candidate_id: candidate_id.to_string(),
            scorer_fingerprint: fingerprint.to_string(),
        }
    }
}

/// Log-scores keyed by pair and scorer. Reads may run concurrently; writes
/// take the lock exclusively.
#[derive(Debug, Default)]
pub struct ScoreCache {
    map: RwLock<HashMap<CacheKey, f64>>,
}

impl ScoreCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &CacheKey) -> Option<f64> {
        self.map.read().expect("cache lock").get(key).copied()
    }

    pub fn insert(&self, key: CacheKey, score: f64) {
        self.map.write().expect("cache lock").insert(key, score);
    }

    pub fn extend(&self, entries: impl IntoIterator<Item = (CacheKey, f64)>) {
        let mut map = self.map.write().expect("cache lock");
        map.extend(entries);
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
