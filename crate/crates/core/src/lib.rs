//! Temporal vector knowledge base: chunk-level change detection, a hot HNSW
//! index over current content and an append-only cold log of every version,
//! kept consistent through a write-ahead commit protocol.

pub mod change_detection;
pub mod chunking;
pub mod clock;
pub mod cold;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod failpoint;
pub mod frame;
pub mod hot;
pub mod pipeline;
pub mod query;
pub mod store;
pub mod transactions;

pub use error::{Error, Result};
