//! Wind-power ramp event classification with multi-class gradient boosted
//! regression trees.
//!
//! The crate is organised as a batch pipeline:
//!
//! * [`ingest`] reads and validates a uniformly sampled wind-power series.
//! * [`labeling`] differences the series, assigns ramp classes against a
//!   threshold set and builds lagged feature windows per forecast horizon.
//! * [`gbrt`] trains a second-order boosted tree ensemble (one tree per class
//!   per round) with exact greedy, feature-parallel split finding.
//! * [`evaluation`] provides stratified splitting, k-fold grid search and the
//!   accuracy / macro-F1 / rare-event-F1 metric suite.
//! * [`baselines`] holds the persistence and majority-class reference
//!   predictors.
//! * [`synth`] generates synthetic series used as fixtures and benchmarks.

pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod gbrt;
pub mod ingest;
pub mod labeling;
pub mod matrix;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
