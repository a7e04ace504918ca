//! Tracklet-level person re-identification over precomputed frame
//! embeddings: temporal attention pooling, a multi-term training objective
//! with hand-written gradients, cosine retrieval with k-reciprocal
//! re-ranking, and protocol-aware evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datamodel;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod pooling;
pub mod retrieval;
pub mod synthfix;
pub mod training;

pub use error::{Error, Result};
