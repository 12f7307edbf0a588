//! Visual memory engine: an explicit store of labeled embeddings queried by
//! exact cosine KNN, with record-level deletion, leave-one-out privacy
//! audits, patch-level segmentation probes and procedural image generation.

pub mod afc;
pub mod error;
pub mod governance;
pub mod kmeans;
pub mod knn;
pub mod procgen;
pub mod segmentation;
pub mod stats;
pub mod store;

pub use error::{Error, ErrorCategory, Result};
pub use governance::{audit_privacy_fast, audit_privacy_naive, MemoryHandle, PrivacyAuditReport};
pub use knn::{classify, knn_search, majority_vote, Neighbor, NeighborList, Prediction, DEFAULT_K};
pub use store::{read_store, write_store, EmbeddingRecord, EmbeddingStore, Label, PatchGrid};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
