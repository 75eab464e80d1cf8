//! Curation toolkit for code pretraining corpora.
//!
//! Stages, in pipeline order: [`corpus`] ingestion and partitioning,
//! [`dedupe`], [`decontam`], model-based quality scoring in [`annotator`],
//! token-budgeted [`selection`], repo grouping and sequence [`packing`],
//! learning-rate [`schedule`]s, annotator evaluation in [`eval`], and
//! synthetic-data seeding in [`synth`].

pub mod annotator;
pub mod corpus;
pub mod decontam;
pub mod dedupe;
pub mod eval;
pub mod hashing;
pub mod io;
pub mod packing;
pub mod schedule;
pub mod selection;
pub mod synth;
