//! Curation toolkit for multiple-choice question datasets: ingestion and
//! variants, model backends, distractor strength, iterative distractor
//! curation, short-answer conversion baselines, and analysis.

pub mod analysis;
pub mod backend;
pub mod conversion;
pub mod dataset;
pub mod error;
pub mod idc;
pub mod seed;
pub mod strength;

pub use error::{Error, Result};
