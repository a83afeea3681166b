use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One conditional-likelihood query: `p(continuation | context)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorePair {
    pub context: String,
    pub continuation: String,
}

impl ScorePair {
    pub fn new(context: impl Into<String>, continuation: impl Into<String>) -> Self {
        Self {
            context: context.into(),
            continuation: continuation.into(),
        }
    }
}

/// A language model that can report conditional likelihoods.
///
/// Implementations work in log space: every returned value is
/// `ln p(continuation | context)`, finite and `<= 0`, or `-inf` for a zero
/// probability. Results must be deterministic for fixed inputs.
pub trait Scorer: Send + Sync {
    /// Stable identity of the scorer kind and configuration. Used to key the
    /// score cache.
    fn fingerprint(&self) -> String;

    fn log_likelihoods(&self, pairs: &[ScorePair]) -> Result<Vec<f64>>;

    fn log_likelihood(&self, context: &str, continuation: &str) -> Result<f64> {
        let out = self.log_likelihoods(&[ScorePair::new(context, continuation)])?;
        out.into_iter()
            .next()
            .ok_or_else(|| Error::Contract("scorer returned no value".to_string()))
    }

    /// `p(continuation | context)` in `[0, 1]`.
    fn cond_likelihood(&self, context: &str, continuation: &str) -> Result<f64> {
        Ok(self.log_likelihood(context, continuation)?.exp())
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }

    fn log_likelihoods(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
        (**self).log_likelihoods(pairs)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }

    fn log_likelihoods(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
        (**self).log_likelihoods(pairs)
    }
}

/// Checks a batch of log-likelihoods against the scorer contract.
pub fn check_log_likelihoods(values: &[f64], expected_len: usize) -> Result<()> {
    if values.len() != expected_len {
        return Err(Error::Contract(format!(
            "scorer returned {} values for {expected_len} pairs",
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| v.is_nan() || **v > 1e-9) {
        return Err(Error::Contract(format!(
            "log-likelihood {v} is outside (-inf, 0]"
        )));
    }
    Ok(())
}

pub(crate) fn fingerprint_of(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(&h.finalize()[..12])
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    // Summing in sorted order makes the result independent of input order.
    let mut terms: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    terms.sort_by(f64::total_cmp);
    max + terms.iter().sum::<f64>().ln()
}

/// A scorer backed by a closure; handy for tests and ad-hoc experiments.
pub struct FnScorer<F> {
    name: String,
    f: F,
}

impl<F> FnScorer<F>
where
    F: Fn(&str, &str) -> f64 + Send + Sync,
{
    /// `f` returns the plain likelihood `p(continuation | context)`.
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F> Scorer for FnScorer<F>
where
    F: Fn(&str, &str) -> f64 + Send + Sync,
{
    fn fingerprint(&self) -> String {
        fingerprint_of(&["fn", &self.name])
    }

    fn log_likelihoods(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
        let out: Vec<f64> = pairs
            .iter()
            .map(|p| (self.f)(&p.context, &p.continuation).ln())
            .collect();
        check_log_likelihoods(&out, pairs.len())?;
        Ok(out)
    }
}
