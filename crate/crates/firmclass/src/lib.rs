//! Hierarchical industry classification engine.
//!
//! Assigns firms to nodes of a tree-shaped industry classification system by
//! combining three sources of signal: industry definition embeddings, the
//! tree structure itself, and time-stamped historical assignments. Industries
//! are represented as per-period vectors built by attention-based spatial
//! (bottom-up over the tree) and temporal (over periods) aggregation, and
//! firms are scored against them with a hierarchy-aware probability
//! factorization.

pub mod assign;
pub mod attention;
pub mod autodiff;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod synth;
pub mod taxonomy;
pub mod train;

pub use error::{Error, Result};
