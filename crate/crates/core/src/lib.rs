//! Extractive question answering over multi-speaker meeting transcripts.
//!
//! The crate covers the whole pipeline: transcript cleanup, input
//! representation, a small self-attention span/answerability model trained
//! with a flat-hierarchical loss, threshold-based answer decision, and an
//! index-level EM/F1 evaluation suite.

pub mod autodiff;
pub mod decision;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod representation;
pub mod synthetic;
pub mod transcript;

pub use error::{Error, Result};
