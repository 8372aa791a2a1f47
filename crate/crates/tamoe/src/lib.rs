//! Topic-aware mixture-of-experts sequence captioner.
//!
//! Captions feature sequences (e.g. precomputed video segment features) with
//! an attention seq2seq model whose output layer is a mixture of experts
//! gated by a topic embedding. Topic embeddings are built from external
//! per-topic document corpora via TF-IDF-weighted word vectors, which lets a
//! trained model caption topics that never had paired training data.

pub mod checkpoint;
pub mod decoding;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod metrics;
pub mod model;
pub mod text;
pub mod training;
pub mod topic;

pub use error::{Error, Result};
