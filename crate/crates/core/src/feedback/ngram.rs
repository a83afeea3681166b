//! Additive-smoothed word-level n-gram language model.
//!
//! `p(w | h) = (c(h, w) + δ) / (c(h) + δ·|V|)`, with `|V|` the number of
//! distinct training terms plus one unknown-term slot. Histories are padded
//! with a start symbol that is never predicted.

use std::collections::HashMap;

use super::scorer::{check_log_likelihoods, fingerprint_of, ScorePair, Scorer};
use crate::corpus::DatasetRegistry;
use crate::error::{Error, Result};
use crate::text::tokenize;

const START: u32 = u32::MAX;
const UNKNOWN: u32 = 0;

#[derive(Debug, Clone)]
pub struct NGramScorer {
    order: usize,
    smoothing: f64,
    vocab: HashMap<String, u32>,
    ngrams: HashMap<Vec<u32>, u32>,
    histories: HashMap<Vec<u32>, u32>,
    fingerprint: String,
}

impl NGramScorer {
    pub const DEFAULT_ORDER: usize = 2;
    pub const DEFAULT_SMOOTHING: f64 = 0.1;

    pub fn fit<'a, I>(texts: I, order: usize, smoothing: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if order == 0 {
            return Err(Error::Config("n-gram order must be >= 1".to_string()));
        }
        if !(smoothing > 0.0) {
            return Err(Error::Config("n-gram smoothing must be > 0".to_string()));
        }
        let mut vocab: HashMap<String, u32> = HashMap::new();
        let mut ngrams: HashMap<Vec<u32>, u32> = HashMap::new();
        let mut histories: HashMap<Vec<u32>, u32> = HashMap::new();
        let mut digest_parts = vec![format!("ngram:{order}:{smoothing}")];
        for text in texts {
            digest_parts.push(text.to_string());
            let mut seq = vec![START; order - 1];
            for term in tokenize(text) {
                let next = vocab.len() as u32 + 1;
                seq.push(*vocab.entry(term).or_insert(next));
            }
            for window in seq.windows(order) {
                *ngrams.entry(window.to_vec()).or_default() += 1;
                *histories.entry(window[..order - 1].to_vec()).or_default() += 1;
            }
        }
        let parts: Vec<&str> = digest_parts.iter().map(String::as_str).collect();
        let fingerprint = fingerprint_of(&parts);
        Ok(Self {
            order,
            smoothing,
            vocab,
            ngrams,
            histories,
            fingerprint,
        })
    }

    /// Fit on the rendered training demonstrations of every task.
    pub fn fit_registry(registry: &DatasetRegistry) -> Result<Self> {
        let mut texts = Vec::new();
        for spec in registry.tasks() {
            for e in registry.train(&spec.task_id) {
                texts.push(spec.render_demo(e)?);
            }
        }
        Self::fit(texts.iter().map(String::as_str), Self::DEFAULT_ORDER, Self::DEFAULT_SMOOTHING)
    }

    /// Output vocabulary size including the unknown slot.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + 1
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.vocab.keys().map(String::as_str)
    }

    fn id(&self, term: &str) -> u32 {
        self.vocab.get(term).copied().unwrap_or(UNKNOWN)
    }

    fn log_prob(&self, history: &[u32], word: u32) -> f64 {
        let mut gram = history.to_vec();
        gram.push(word);
        let c = f64::from(self.ngrams.get(&gram).copied().unwrap_or(0));
        let ch = f64::from(self.histories.get(history).copied().unwrap_or(0));
        ((c + self.smoothing) / (ch + self.smoothing * self.vocab_size() as f64)).ln()
    }

    fn score(&self, context: &str, continuation: &str) -> f64 {
        let h = self.order - 1;
        let mut seq = vec![START; h];
        seq.extend(tokenize(context).iter().map(|t| self.id(t)));
        let mut total = 0.0;
        for term in tokenize(continuation) {
            let w = self.id(&term);
            total += self.log_prob(&seq[seq.len() - h..], w);
            seq.push(w);
        }
        total
    }
}

impl Scorer for NGramScorer {
    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn log_likelihoods(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
        let out: Vec<f64> = pairs
            .iter()
            .map(|p| self.score(&p.context, &p.continuation))
            .collect();
        check_log_likelihoods(&out, pairs.len())?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(order: usize) -> NGramScorer {
        NGramScorer::fit(["the cat sat", "the dog sat", "a cat ran"], order, 0.1).unwrap()
    }

    #[test]
    fn seen_continuation_beats_unseen() {
        let m = lm(2);
        let seen = m.log_likelihood("the", "cat").unwrap();
        let unseen = m.log_likelihood("the", "ran").unwrap();
        assert!(seen > unseen);
        assert_eq!(m.log_likelihood("the", "").unwrap(), 0.0);
    }

    #[test]
    fn continuations_form_a_sub_distribution() {
        for order in 1..=3 {
            let m = lm(order);
            let mut words: Vec<String> = m.terms().map(str::to_string).collect();
            words.push("never-seen".to_string());
            for ctx in ["", "the", "a cat", "zebra"] {
                let mut total = 0.0;
                for a in &words {
                    for b in &words {
                        total += m.cond_likelihood(ctx, &format!("{a} {b}")).unwrap();
                    }
                }
                assert!(total <= 1.0 + 1e-9, "order {order} ctx {ctx:?}: {total}");
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fingerprint_tracks_configuration() {
        assert_eq!(lm(2).fingerprint(), lm(2).fingerprint());
        assert_ne!(lm(2).fingerprint(), lm(3).fingerprint());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(NGramScorer::fit(["x"], 0, 0.1).is_err());
        assert!(NGramScorer::fit(["x"], 2, 0.0).is_err());
    }
}
