//! Demonstration retrieval for in-context learning.
//!
//! A single instruction-conditioned dual encoder is trained from language
//! model feedback: candidate demonstrations for every training example are
//! scored by a [`feedback::Scorer`], ranked, and the encoder learns that
//! ranking with a pairwise rank-weighted loss mixed with an in-batch
//! softmax loss. Candidates are periodically re-mined with the encoder
//! itself. At inference time the encoder retrieves demonstrations from a
//! task's training pool, which are then selected under a context budget,
//! ordered and rendered into a prompt.
//!
//! Module map:
//!
//! * [`corpus`] tasks, examples, templates, JSONL I/O, task sampling
//! * [`lexical`] BM25 index and lexical candidate initialization
//! * [`feedback`] scorers, candidate scoring and ranking
//! * [`encoder`] the dual encoder and its checkpoint format
//! * [`trainer`] losses, optimizer, candidate mining, the training loop
//! * [`dense_index`] exact maximum-inner-product search
//! * [`inference`] retrieval, demonstration selection, prompts, metrics
//! * [`synthetic`] the latent-key fixture used by tests and demos
//! * [`cli`] the `udr` command-line front end

mod binio;
pub mod cli;
pub mod corpus;
pub mod dense_index;
pub mod encoder;
pub mod error;
pub mod feedback;
pub mod inference;
pub mod lexical;
pub mod par;
pub mod synthetic;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
