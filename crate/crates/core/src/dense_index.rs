//! Exact maximum-inner-product search over encoded demonstration pools.
//!
//! Vectors are stored as f32; dot products accumulate in f64. Results are
//! sorted by descending score with ties broken by ascending row ordinal.
//!
//! Index file layout (little-endian, strings are u32 length + UTF-8):
//!
//! ```text
//! "UDX1" | version u32 | task_id | fingerprint | N u32 | d u32
//! N × id | N×d f32 row-major
//! ```

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::corpus::DatasetRegistry;
use crate::encoder::{encode_corpus, BiEncoderParams};
use crate::error::{Error, Result};
use crate::par;

pub const MAGIC: &[u8; 4] = b"UDX1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    pub task_id: String,
    pub checkpoint_fingerprint: String,
    pub ids: Vec<String>,
    pub dim: usize,
    /// N×d row-major.
    pub vectors: Vec<f32>,
}

fn by_score_then_ordinal(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b))
}

/// Indices of the `k` largest scores (descending, ties by ascending index),
/// skipping `exclude`.
pub fn top_k_indices(scores: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|i| Some(*i) != exclude).collect();
    let cmp = by_score_then_ordinal(scores);
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, &cmp);
        idx.truncate(k);
    }
    idx.sort_by(&cmp);
    idx
}

/// f64-accumulated dot product of an f32 row with an f32 query.
pub fn dot_f32(row: &[f32], query: &[f32]) -> f64 {
    row.iter()
        .zip(query)
        .map(|(a, b)| f64::from(*a) * f64::from(*b))
        .sum()
}

impl DenseIndex {
    pub fn from_rows(
        task_id: impl Into<String>,
        checkpoint_fingerprint: impl Into<String>,
        ids: Vec<String>,
        rows: &[Vec<f64>],
        dim: usize,
    ) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::Build(format!("{} ids for {} rows", ids.len(), rows.len())));
        }
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::Build(format!("row of width {} in a {dim}-d index", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Build("non-finite vector".to_string()));
            }
            vectors.extend(row.iter().map(|v| *v as f32));
        }
        Ok(Self {
            task_id: task_id.into(),
            checkpoint_fingerprint: checkpoint_fingerprint.into(),
            ids,
            dim,
            vectors,
        })
    }

    /// One demonstration-tower row per training example of `task_id`.
    pub fn build(params: &BiEncoderParams, registry: &DatasetRegistry, task_id: &str) -> Result<Self> {
        let spec = registry.task(task_id)?;
        let train = registry.train(task_id);
        if train.is_empty() {
            return Err(Error::Build(format!("task `{task_id}` has an empty train split")));
        }
        let rows = encode_corpus(params, train, spec)?;
        let ids = train.iter().map(|e| e.example_id.clone()).collect();
        Self::from_rows(task_id, params.fingerprint(), ids, &rows, params.dim)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn scores(&self, query: &[f32]) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            return Err(Error::Contract(format!(
                "query has {} dims, index has {}",
                query.len(),
                self.dim
            )));
        }
        Ok((0..self.len()).map(|i| dot_f32(self.row(i), query)).collect())
    }

    /// Exact top-`k` by inner product.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::Contract("k must be >= 1".to_string()));
        }
        let scores = self.scores(query)?;
        Ok(top_k_indices(&scores, k, None)
            .into_iter()
            .map(|i| (self.ids[i].clone(), scores[i]))
            .collect())
    }

    /// [`search`](Self::search) for many queries at once.
    pub fn search_batch(&self, queries: &[Vec<f32>], k: usize) -> Result<Vec<Vec<(String, f64)>>> {
        par::try_map(queries, |q| self.search(q, k))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.string(&self.task_id);
        w.string(&self.checkpoint_fingerprint);
        w.u32(self.len() as u32);
        w.u32(self.dim as u32);
        for id in &self.ids {
            w.string(id);
        }
        w.raw_f32s(&self.vectors);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "index");
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let task_id = r.string()?;
        let checkpoint_fingerprint = r.string()?;
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            ids.push(r.string()?);
        }
        let vectors = r.raw_f32s(n * dim)?;
        r.end()?;
        Ok(Self {
            task_id,
            checkpoint_fingerprint,
            ids,
            dim,
            vectors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
