use std::collections::HashMap;

use crate::corpus::{DatasetRegistry, Split};
use crate::error::Result;
use crate::text::tokenize;

pub const UNK: u32 = 0;
pub const UNK_TERM: &str = "<unk>";

/// Dense term index shared by both encoder towers. Index 0 is the unknown term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_terms(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Terms are numbered in order of first appearance after `<unk>`.
    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self {
            terms: vec![UNK_TERM.to_string()],
            index: HashMap::from([(UNK_TERM.to_string(), UNK)]),
        };
        for t in terms {
            vocab.push(t.into());
        }
        vocab
    }

    fn push(&mut self, term: String) {
        if !self.index.contains_key(&term) {
            self.index.insert(term.clone(), self.terms.len() as u32);
            self.terms.push(term);
        }
    }

    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_terms(texts.into_iter().flat_map(tokenize))
    }

    /// Instructions, rendered training demonstrations and training inputs of
    /// every task.
    pub fn from_registry(registry: &DatasetRegistry) -> Result<Self> {
        let mut texts = Vec::new();
        for spec in registry.tasks() {
            texts.push(spec.instruction.clone());
            for ex in registry.examples(&spec.task_id, Split::Train) {
                texts.push(spec.render_demo(ex)?);
                texts.push(ex.input.clone());
            }
        }
        Ok(Self::from_texts(texts.iter().map(String::as_str)))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.len() <= 1
    }

    pub fn id(&self, term: &str) -> u32 {
        self.index.get(term).copied().unwrap_or(UNK)
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Token ids of `instruction ⊕ " " ⊕ text`; a lone `<unk>` when nothing is left.
    pub fn encode_ids(&self, instruction: &str, text: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = tokenize(instruction)
            .iter()
            .chain(tokenize(text).iter())
            .map(|t| self.id(t))
            .collect();
        if ids.is_empty() {
            ids.push(UNK);
        }
        ids
    }
}
