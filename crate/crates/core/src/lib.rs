//! Functional-token reasoning machinery at desk scale.
//!
//! * [`vocab`]: partitioned vocabulary with the five functional tokens.
//! * [`corpus`]: lexical extraction of visual operations from drawing code.
//! * [`trajectory`]: templated trajectories, dataset records, cross-entropy.
//! * [`reward`]: the five-term composite reward.
//! * [`policy`]: a bigram softmax policy with exact gradients.
//! * [`objectives`]: GRPO, the functional-token anchored variant and
//!   gradient-share diagnostics.
//! * [`harness`]: the synthetic hint task, training loop, ablations and
//!   efficiency accounting.

pub mod corpus;
pub mod error;
pub mod harness;
pub mod objectives;
pub mod policy;
pub mod reward;
pub mod trajectory;
pub mod vocab;

pub use error::{Error, Result};
pub use vocab::{FunctionalKind, TokenClass, TokenId, Vocabulary};
