//! Noisy-channel sequence generation at desk scale.
//!
//! Combines a direct model p(y|x), a channel model p(x|y) that always scores
//! the entire source, and a language model p(y). The crate provides the
//! two-step pre-pruned beam search, n-best reranking and weight tuning,
//! prefix-truncation analyses, corpus BLEU, a binary scorer protocol for
//! out-of-process models, and small IBM-1 / n-gram toy models to drive it all.

pub mod bridge;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod nbest;
pub mod oracle;
pub mod pipeline;
pub mod reranker;
pub mod scorers;
pub mod synthetic;
pub mod toy;
pub mod vocab;

pub use error::{Error, Result};
