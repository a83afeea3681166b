//! Okapi BM25 over an in-memory inverted index.
//!
//! ```text
//! score(D, Q) = Σ_{t ∈ Q} idf(t) · tf(t,D)·(k1 + 1) / (tf(t,D) + k1·(1 − b + b·|D|/avgdl))
//! idf(t)      = ln(1 + (N − df(t) + 0.5) / (df(t) + 0.5))
//! ```
//!
//! Query terms are deduplicated before scoring. The index backs the BM25
//! baseline retriever and the lexical candidate initialization used before
//! the first training phase.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetRegistry, Example, TaskKind};
use crate::error::{Error, Result};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    /// term -> (doc ordinal, term frequency), sorted by ordinal.
    pub postings: BTreeMap<String, Vec<(usize, u32)>>,
    pub doc_lengths: Vec<usize>,
    pub doc_ids: Vec<String>,
    pub avg_doc_len: f64,
    pub params: Bm25Params,
}

impl InvertedIndex {
    pub fn build<I, S, T>(docs: I, params: Bm25Params) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        if !(params.k1 > 0.0) || !(0.0..=1.0).contains(&params.b) {
            return Err(Error::Build(format!(
                "invalid BM25 parameters k1={} b={}",
                params.k1, params.b
            )));
        }
        let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::new();
        let mut doc_ids = Vec::new();
        let mut seen = HashSet::new();
        for (ordinal, (id, text)) in docs.into_iter().enumerate() {
            let id = id.into();
            if !seen.insert(id.clone()) {
                return Err(Error::Build(format!("duplicate document id `{id}`")));
            }
            let terms = tokenize(text.as_ref());
            doc_lengths.push(terms.len());
            doc_ids.push(id);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((ordinal, count));
            }
        }
        if doc_ids.is_empty() {
            return Err(Error::Build("empty corpus".to_string()));
        }
        // Ordinals were pushed in increasing order per term.
        let avg_doc_len = doc_lengths.iter().sum::<usize>() as f64 / doc_lengths.len() as f64;
        Ok(Self {
            postings,
            doc_lengths,
            doc_ids,
            avg_doc_len,
            params,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn idf(&self, df: usize) -> f64 {
        let n = self.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Scores of every matched document, indexed by ordinal (0 when unmatched).
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.len()];
        let Bm25Params { k1, b } = self.params;
        let avgdl = if self.avg_doc_len > 0.0 { self.avg_doc_len } else { 1.0 };
        let mut seen = HashSet::new();
        for term in tokenize(query) {
            if !seen.insert(term.clone()) {
                continue;
            }
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for &(doc, tf) in list {
                let tf = f64::from(tf);
                let norm = k1 * (1.0 - b + b * self.doc_lengths[doc] as f64 / avgdl);
                scores[doc] += idf * tf * (k1 + 1.0) / (tf + norm);
            }
        }
        scores
    }

    fn matched(&self, query: &str) -> Vec<(usize, f64)> {
        let mut matched = vec![false; self.len()];
        for term in tokenize(query) {
            if let Some(list) = self.postings.get(&term) {
                for &(doc, _) in list {
                    matched[doc] = true;
                }
            }
        }
        let scores = self.scores(query);
        let mut hits: Vec<(usize, f64)> = (0..self.len())
            .filter(|&d| matched[d])
            .map(|d| (d, scores[d]))
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits
    }

    /// Top `k` matched documents, descending score, ties by ascending ordinal.
    pub fn top_k(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        self.matched(query)
            .into_iter()
            .take(k)
            .map(|(d, s)| (self.doc_ids[d].clone(), s))
            .collect()
    }

    /// Like [`top_k`](Self::top_k) but skips `exclude` and pads with
    /// unmatched documents (score 0, ordinal order) up to `k`.
    pub fn top_k_filled(&self, query: &str, k: usize, exclude: Option<&str>) -> Vec<(String, f64)> {
        let hits = self.matched(query);
        let mut taken = vec![false; self.len()];
        let mut out = Vec::with_capacity(k);
        let keep = |d: usize| exclude != Some(self.doc_ids[d].as_str());
        for (d, s) in hits {
            if out.len() == k {
                return out;
            }
            taken[d] = true;
            if keep(d) {
                out.push((self.doc_ids[d].clone(), s));
            }
        }
        for d in 0..self.len() {
            if out.len() == k {
                break;
            }
            if !taken[d] && keep(d) {
                out.push((self.doc_ids[d].clone(), 0.0));
            }
        }
        out
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("bad index file: {e}")))
    }
}

pub fn build_index(docs: &[(String, String)], k1: f64, b: f64) -> Result<InvertedIndex> {
    InvertedIndex::build(docs.iter().map(|(i, t)| (i.clone(), t.as_str())), Bm25Params { k1, b })
}

pub fn bm25_top_k(index: &InvertedIndex, query: &str, k: usize) -> Vec<(String, f64)> {
    index.top_k(query, k)
}

/// Which side of an example the lexical candidate search compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    ByInput,
    ByTarget,
}

impl InitMode {
    /// Inputs for classification and multi-choice, targets for generation.
    pub fn for_kind(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Classification | TaskKind::MultiChoice => InitMode::ByInput,
            TaskKind::Generation => InitMode::ByTarget,
        }
    }

    fn text(self, example: &Example) -> &str {
        match self {
            InitMode::ByInput => &example.input,
            InitMode::ByTarget => &example.target,
        }
    }
}

/// BM25 indexes over task train splits, keyed by (task, mode).
#[derive(Debug, Clone, Default)]
pub struct LexicalPool {
    indexes: HashMap<(String, InitMode), InvertedIndex>,
}

impl LexicalPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn index_task(
        &mut self,
        registry: &DatasetRegistry,
        task_id: &str,
        mode: InitMode,
        params: Bm25Params,
    ) -> Result<()> {
        let train = registry.train(task_id);
        let index = InvertedIndex::build(
            train.iter().map(|e| (e.example_id.clone(), mode.text(e))),
            params,
        )?;
        self.indexes.insert((task_id.to_string(), mode), index);
        Ok(())
    }

    /// Indexes every task with a non-empty train split, in the mode its kind selects.
    pub fn for_registry(registry: &DatasetRegistry, params: Bm25Params) -> Result<Self> {
        let mut pool = Self::new();
        for spec in registry.tasks() {
            if !registry.train(&spec.task_id).is_empty() {
                pool.index_task(registry, &spec.task_id, InitMode::for_kind(spec.kind), params)?;
            }
        }
        Ok(pool)
    }

    pub fn index(&self, task_id: &str, mode: InitMode) -> Option<&InvertedIndex> {
        self.indexes.get(&(task_id.to_string(), mode))
    }

    /// Top-`k` lexically similar training examples for `query`, never the
    /// query itself.
    pub fn init_candidates(&self, query: &Example, k: usize, mode: InitMode) -> Result<Vec<String>> {
        let index = self.index(&query.task_id, mode).ok_or_else(|| {
            Error::State(format!(
                "task `{}` has no {mode:?} lexical index",
                query.task_id
            ))
        })?;
        Ok(index
            .top_k_filled(mode.text(query), k, Some(&query.example_id))
            .into_iter()
            .map(|(id, _)| id)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, TaskSpec, TemplateSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn three() -> InvertedIndex {
        let docs: Vec<(String, String)> = ["a b", "a c", "b c"]
            .iter()
            .enumerate()
            .map(|(i, t)| (i.to_string(), t.to_string()))
            .collect();
        build_index(&docs, 1.2, 0.75).unwrap()
    }

    #[test]
    fn average_length() {
        assert_abs_diff_eq!(three().avg_doc_len, 2.0);
    }

    #[test]
    fn postings_are_direct_counts() {
        assert_eq!(three().postings["a"], vec![(0, 1), (1, 1)]);
    }

    #[test]
    fn golden_score() {
        let hits = bm25_top_k(&three(), "a", 1);
        assert_eq!(hits[0].0, "0");
        assert_abs_diff_eq!(hits[0].1, 1.6f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(hits[0].1, 0.470004, epsilon = 1e-6);
    }

    #[test]
    fn unknown_terms_give_nothing() {
        assert!(bm25_top_k(&three(), "zzz qqq", 5).is_empty());
        assert!(bm25_top_k(&three(), "", 5).is_empty());
    }

    #[test]
    fn self_query_ranks_first() {
        let idx = three();
        for (i, text) in ["a b", "a c", "b c"].iter().enumerate() {
            assert_eq!(bm25_top_k(&idx, text, 1)[0].0, i.to_string());
        }
    }

    #[test]
    fn build_errors() {
        assert!(matches!(build_index(&[], 1.2, 0.75), Err(Error::Build(_))));
        let dup = vec![("x".to_string(), "a".to_string()), ("x".to_string(), "b".to_string())];
        assert!(matches!(build_index(&dup, 1.2, 0.75), Err(Error::Build(_))));
        let one = vec![("x".to_string(), "a".to_string())];
        assert!(build_index(&one, 0.0, 0.75).is_err());
        assert!(build_index(&one, 1.2, 1.5).is_err());
    }

    #[test]
    fn json_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bm25.json");
        let idx = three();
        idx.save_json(&path).unwrap();
        assert_eq!(InvertedIndex::load_json(&path).unwrap(), idx);
    }

    fn registry(kind: TaskKind) -> DatasetRegistry {
        let spec = TaskSpec {
            task_id: "t".into(),
            name: String::new(),
            kind,
            instruction: "do it".into(),
            verbalizers: vec!["yes".into(), "no".into()],
            template: TemplateSpec::new("{input} => {target}", "{input} =>", "\n"),
            max_target_len: 4,
            context_budget: 64,
        };
        let mut reg = DatasetRegistry::from_tasks([spec]).unwrap();
        for (id, x, y) in [("0", "red apple", "yes"), ("1", "red car", "no"), ("2", "blue sky", "yes"), ("3", "green apple", "no")] {
            reg.add_example(Split::Train, Example::new("t", id, x, y)).unwrap();
        }
        reg
    }

    #[test]
    fn classification_initializes_by_input() {
        assert_eq!(InitMode::for_kind(TaskKind::Classification), InitMode::ByInput);
        assert_eq!(InitMode::for_kind(TaskKind::MultiChoice), InitMode::ByInput);
        assert_eq!(InitMode::for_kind(TaskKind::Generation), InitMode::ByTarget);
    }

    #[test]
    fn init_candidates_excludes_self_and_truncates() {
        let reg = registry(TaskKind::Classification);
        let pool = LexicalPool::for_registry(&reg, Bm25Params::default()).unwrap();
        let q = reg.get("t", "0").unwrap();
        let c = pool.init_candidates(q, 2, InitMode::ByInput).unwrap();
        assert!(!c.contains(&"0".to_string()));
        assert_eq!(c.len(), 2);
        let all = pool.init_candidates(q, 10, InitMode::ByInput).unwrap();
        assert_eq!(all.len(), 3);
        assert!(!all.contains(&"0".to_string()));
    }

    #[test]
    fn init_candidates_by_target() {
        let reg = registry(TaskKind::Generation);
        let pool = LexicalPool::for_registry(&reg, Bm25Params::default()).unwrap();
        let q = reg.get("t", "0").unwrap();
        let c = pool.init_candidates(q, 1, InitMode::ByTarget).unwrap();
        assert_eq!(c, vec!["2".to_string()]);
        assert!(matches!(
            pool.init_candidates(q, 1, InitMode::ByInput),
            Err(Error::State(_))
        ));
    }

    // Independent exhaustive scorer: recomputes df/tf from raw token lists.
    fn brute_force(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<(usize, f64)> {
        let n = docs.len() as f64;
        let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let mut q: Vec<&String> = Vec::new();
        for t in query {
            if !q.contains(&t) {
                q.push(t);
            }
        }
        let mut out = Vec::new();
        for (d, doc) in docs.iter().enumerate() {
            let mut s = 0.0;
            let mut hit = false;
            for t in &q {
                let tf = doc.iter().filter(|w| w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                hit = true;
                let df = docs.iter().filter(|dd| dd.contains(t)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc.len() as f64 / avgdl));
            }
            if hit {
                out.push((d, s));
            }
        }
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    proptest! {
        #[test]
        fn matches_exhaustive_scoring(
            docs in prop::collection::vec(prop::collection::vec(0u8..12, 1..8), 1..40),
            query in prop::collection::vec(0u8..14, 0..5),
        ) {
            let words = |v: &Vec<u8>| v.iter().map(|w| format!("w{w}")).collect::<Vec<_>>();
            let doc_terms: Vec<Vec<String>> = docs.iter().map(words).collect();
            let pairs: Vec<(String, String)> = doc_terms.iter().enumerate().map(|(i, t)| (i.to_string(), t.join(" "))).collect();
            let idx = build_index(&pairs, 1.2, 0.75).unwrap();
            let q = words(&query);
            let got = bm25_top_k(&idx, &q.join(" "), docs.len());
            let want = brute_force(&doc_terms, &q, 1.2, 0.75);
            prop_assert_eq!(got.len(), want.len());
            for ((gid, gs), (wd, ws)) in got.iter().zip(&want) {
                prop_assert_eq!(gid, &wd.to_string());
                prop_assert!((gs - ws).abs() < 1e-9);
                prop_assert!(*gs >= 0.0);
            }
        }
    }
}
