//! Timespan-aware hierarchical graph attention engine for sequential
//! recommendation: sequence graphs weighted by inter-event gaps, two-level
//! attention with soft preference clustering, temporal-attentive scoring,
//! and a pairwise-ranking training loop with hand-written gradients.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod explain;
pub mod model;
pub mod training;
pub mod tsg;

pub use error::{Error, Result};
