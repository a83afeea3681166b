//! Instruction-conditioned dual encoder.
//!
//! Each tower maps text to `P · mean(E[t] for t in tokens(instruction ⊕ text))`
//! with a trainable embedding table `E` (V×d) and projection `P` (d×d). The
//! similarity of a query and a demonstration is the raw dot product of the
//! query tower's and the demonstration tower's outputs. Everything here is
//! small enough to differentiate by hand; see [`TowerParams::backward`].
//!
//! Parameters are held as `f64` but always carry f32-representable values,
//! so checkpoints round-trip exactly.

mod checkpoint;
mod vocab;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus::{Example, TaskSpec};
use crate::error::Result;
use crate::par;

pub use checkpoint::{MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use vocab::{Vocabulary, UNK, UNK_TERM};

pub const DEFAULT_DIM: usize = 32;

/// One encoder tower. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerParams {
    /// V×d token embeddings.
    pub embeddings: Vec<f64>,
    /// d×d output projection.
    pub projection: Vec<f64>,
}

/// Intermediates of one forward pass, enough to backpropagate exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingTape {
    pub tokens: Vec<u32>,
    /// Mean of the token embeddings (pre-projection).
    pub pooled: Vec<f64>,
    pub output: Vec<f64>,
}

/// Gradient buffers with the same shapes as a [`TowerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct TowerGrad {
    pub embeddings: Vec<f64>,
    pub projection: Vec<f64>,
}

impl TowerGrad {
    pub fn zeros_like(tower: &TowerParams) -> Self {
        Self {
            embeddings: vec![0.0; tower.embeddings.len()],
            projection: vec![0.0; tower.projection.len()],
        }
    }

    pub fn add(&mut self, other: &TowerGrad) {
        for (a, b) in self.embeddings.iter_mut().zip(&other.embeddings) {
            *a += b;
        }
        for (a, b) in self.projection.iter_mut().zip(&other.projection) {
            *a += b;
        }
    }
}

impl TowerParams {
    pub fn dim(&self) -> usize {
        (self.projection.len() as f64).sqrt() as usize
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.len() / self.dim()
    }

    pub fn embedding(&self, token: u32) -> &[f64] {
        let d = self.dim();
        let start = token as usize * d;
        &self.embeddings[start..start + d]
    }

    fn pool(&self, tokens: &[u32]) -> Vec<f64> {
        let d = self.dim();
        let mut pooled = vec![0.0; d];
        for &t in tokens {
            for (p, e) in pooled.iter_mut().zip(self.embedding(t)) {
                *p += e;
            }
        }
        let n = tokens.len().max(1) as f64;
        for p in &mut pooled {
            *p /= n;
        }
        pooled
    }

    fn project(&self, pooled: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| {
                self.projection[i * d..(i + 1) * d]
                    .iter()
                    .zip(pooled)
                    .map(|(p, h)| p * h)
                    .sum()
            })
            .collect()
    }

    pub fn forward(&self, tokens: &[u32]) -> EncodingTape {
        let pooled = self.pool(tokens);
        let output = self.project(&pooled);
        EncodingTape {
            tokens: tokens.to_vec(),
            pooled,
            output,
        }
    }

    /// Re-runs the forward pass recorded on `tape`.
    pub fn replay(&self, tape: &EncodingTape) -> Vec<f64> {
        self.forward(&tape.tokens).output
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂output`.
    pub fn backward(&self, tape: &EncodingTape, grad_output: &[f64], grad: &mut TowerGrad) {
        let d = self.dim();
        // output_i = Σ_j P_ij · pooled_j
        for i in 0..d {
            let g = grad_output[i];
            if g == 0.0 {
                continue;
            }
            for j in 0..d {
                grad.projection[i * d + j] += g * tape.pooled[j];
            }
        }
        let mut grad_pooled = vec![0.0; d];
        for i in 0..d {
            let g = grad_output[i];
            for j in 0..d {
                grad_pooled[j] += self.projection[i * d + j] * g;
            }
        }
        let scale = 1.0 / tape.tokens.len().max(1) as f64;
        for &t in &tape.tokens {
            let start = t as usize * d;
            for (slot, g) in grad.embeddings[start..start + d].iter_mut().zip(&grad_pooled) {
                *slot += g * scale;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiEncoderParams {
    pub vocab: Vocabulary,
    pub query_tower: TowerParams,
    pub demo_tower: TowerParams,
    pub dim: usize,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn round_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

impl BiEncoderParams {
    /// Seeded initialization: embeddings uniform in ±0.05, projections the
    /// identity plus uniform noise in ±0.01.
    pub fn init(vocab: Vocabulary, dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "encoder dimension must be >= 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab.len();
        let mut tower = || {
            let embeddings = (0..v * dim)
                .map(|_| round_f32(rng.gen_range(-0.05..0.05)))
                .collect();
            let projection = (0..dim * dim)
                .map(|k| {
                    let eye = if k / dim == k % dim { 1.0 } else { 0.0 };
                    round_f32(eye + rng.gen_range(-0.01..0.01))
                })
                .collect();
            TowerParams {
                embeddings,
                projection,
            }
        };
        let query_tower = tower();
        let demo_tower = tower();
        Self {
            vocab,
            query_tower,
            demo_tower,
            dim,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn query_ids(&self, spec: &TaskSpec, input: &str) -> Vec<u32> {
        self.vocab.encode_ids(&spec.instruction, input)
    }

    /// Token ids of the instruction followed by the rendered demonstration.
    pub fn demo_ids(&self, spec: &TaskSpec, demo: &Example) -> Result<Vec<u32>> {
        Ok(self.vocab.encode_ids(&spec.instruction, &spec.render_demo(demo)?))
    }

    pub fn encode_query(&self, spec: &TaskSpec, input: &str) -> Vec<f64> {
        self.query_tower.forward(&self.query_ids(spec, input)).output
    }

    pub fn encode_demo(&self, spec: &TaskSpec, demo: &Example) -> Result<Vec<f64>> {
        Ok(self.demo_tower.forward(&self.demo_ids(spec, demo)?).output)
    }

    /// Query-tower encoding of the query input against the demonstration
    /// tower's encoding of the rendered demonstration, both prefixed by the
    /// task instruction.
    pub fn similarity(&self, query: &Example, demo: &Example, spec: &TaskSpec) -> Result<f64> {
        Ok(dot(&self.encode_query(spec, &query.input), &self.encode_demo(spec, demo)?))
    }

    /// SHA-256 of the checkpoint bytes (first 16 bytes, hex).
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        hex::encode(&digest[..16])
    }

    /// Rounds every parameter to the nearest f32.
    pub fn quantize(&mut self) {
        for tower in [&mut self.query_tower, &mut self.demo_tower] {
            for v in tower.embeddings.iter_mut().chain(tower.projection.iter_mut()) {
                *v = round_f32(*v);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.query_tower, &self.demo_tower].iter().all(|t| {
            t.embeddings
                .iter()
                .chain(t.projection.iter())
                .all(|v| v.is_finite())
        })
    }
}

/// Encodes `text` with `tower`, prefixing `instruction`.
pub fn encode(tower: &TowerParams, vocab: &Vocabulary, text: &str, instruction: &str) -> Vec<f64> {
    tower.forward(&vocab.encode_ids(instruction, text)).output
}

/// Demonstration-tower rows for `examples`, in input order.
pub fn encode_corpus(
    params: &BiEncoderParams,
    examples: &[Example],
    spec: &TaskSpec,
) -> Result<Vec<Vec<f64>>> {
    par::try_map(examples, |e| params.encode_demo(spec, e))
}

/// Query-tower rows for `inputs`, in input order.
pub fn encode_queries(params: &BiEncoderParams, inputs: &[&str], spec: &TaskSpec) -> Vec<Vec<f64>> {
    par::map(inputs, |x| params.encode_query(spec, x))
}

pub fn init_params(vocab: Vocabulary, dim: usize, seed: u64) -> BiEncoderParams {
    BiEncoderParams::init(vocab, dim, seed)
}
