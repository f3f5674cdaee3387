//! Disentangling benign (quality) from harmful (conformity) popularity bias
//! in implicit-feedback recommendation.
//!
//! The pipeline: load or synthesise an [`InteractionLog`], split it
//! chronologically, [`fit`] a method, score with one of the
//! [`InferenceMode`]s, and evaluate with the click- and preference-prediction
//! protocols in [`eval`]. [`analysis`] holds the popularity-bias diagnostics.

pub mod analysis;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod synthgen;
pub mod trainer;

pub use dataset::{chrono_split, ChronoSplit, ColumnFormat, Interaction, InteractionLog, Timestamp};
pub use error::{Error, Result};
pub use eval::{EvalReport, Scorer};
pub use model::{
    build_conformity_index, conformity, predict, Checkpoint, ConformityIndex, InferenceMode, TideParams, TideScorer,
};
pub use synthgen::{generate, SynthConfig, SynthTruth};
pub use trainer::{fit, FitResult, Method, TideVariant, TrainConfig};
