//! Multi-task virtual flow metering.
//!
//! A shared residual network is combined with small per-well parameter sets
//! (a piecewise-linear choke remapping and a task embedding) so that one
//! model can be trained across many wells. The crate also carries the
//! single-task baselines, a tape-based reverse-mode differentiator, the
//! time-aware data splitting protocol, evaluation metrics, and a mechanistic
//! choke simulator used to generate synthetic assets.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod gbt;
pub mod model;
pub mod optim;
pub mod plots;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod training;

pub use data::{AssetDataset, AssetId, Features, Scaler, Source, SplitLabel, WellId, WellObservation};
pub use error::{Error, Result};
pub use evaluation::{EvaluationReport, FlowModel};
pub use experiment::{ExperimentConfig, ExperimentOutcome};
pub use gbt::GbtModel;
pub use model::{ModelKind, ModelSpec, NetworkParams, Variant};
pub use training::{HyperConfig, TrainedModel};
