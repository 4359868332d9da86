//! Discovery of novel intents and domains in unlabeled utterance embeddings.
//!
//! The pipeline runs in three stages over fixed-dimension utterance vectors
//! produced by any sentence encoder:
//!
//! 1. [`detector`]: a softmax head with per-class confidence thresholds
//!    flags utterances whose intent is not one of the seen intents.
//! 2. [`metric`] + [`cluster`]: a small projection network is trained with a
//!    three-term margin loss over (anchor, same intent, same domain, other
//!    domain) quadruplets; flagged utterances are then clustered with
//!    complete linkage, cut at the height that best reproduces the seen
//!    intents.
//! 3. [`taxonomy`]: intent clusters are linked into domains with a threshold
//!    learned the same way from the seen domains.
//!
//! [`pipeline`] wires the stages together over on-disk artifacts and
//! [`eval`] scores the result against ground truth.

pub mod cluster;
pub mod corpus;
pub mod detector;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod metric;
pub mod optim;
pub mod pipeline;
pub mod synthetic;
pub mod taxonomy;

pub use error::{Error, Result};

/// A trained model together with its per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainingRun<M> {
    pub model: M,
    pub loss_history: Vec<f64>,
}
