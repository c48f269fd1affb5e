//! Speaker-verification evaluation over precomputed speaker embeddings.
//!
//! The pipeline: load a manifest and an SVEM embedding matrix, bind them into a
//! [`CohortDataset`], enumerate same/different-speaker trial pairs within each
//! (dataset, language) scope, score them by cosine similarity and summarise the
//! scores as EER, DET curves and calibrated thresholds. The [`dedup`] module
//! reuses the same scores to flag participants enrolled under several ids.

pub mod dedup;
pub mod error;
pub mod fmt;
pub mod harness;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod pairing;
mod par;
pub mod scoring;
pub mod svem;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use model::{
    bind_dataset, cohort_stats, BindWarning, CohortDataset, CohortStats, EmbeddingMatrix, Language, MeanStd,
    SampleRecord, Task, UnreferencedRows,
};
pub use pairing::{generate_pairs, plan_pairs, plan_scope, PairLabel, PairPlan, PairScope, TrialPair};
pub use scoring::{cosine, score_matrix, score_pairs, ScoredPair, ScoredPairSet};
