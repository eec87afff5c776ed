//! Building blocks for turning vision-language datasets and raw image corpora
//! into instruction-tuning data.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! * [`templates`] renders generator prompts from a general-instruction pool
//!   and per-task specific instructions.
//! * [`genharness`] pairs corpus images with prompts and drives a generator
//!   backend, with checkpoint/resume.
//! * [`parser`] turns raw generations back into [`schema::Sample`] records,
//!   including normalized region boxes embedded in the text.
//! * [`filter`] deduplicates and applies the region/expression similarity gate.
//! * [`stats`] and [`human_eval`] report on the resulting corpus.
//! * [`pipeline`] composes all of the above and exports training files.
//!
//! Data-parallel stages go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.

pub mod exec;
pub mod export;
pub mod filter;
pub mod genharness;
pub mod human_eval;
pub mod ingest;
pub mod io;
pub mod parser;
pub mod pipeline;
pub mod rng;
pub mod schema;
pub mod stats;
pub mod templates;

pub use schema::{CorpusManifest, Point, RegionBox, Sample, TaskType, Turn};
