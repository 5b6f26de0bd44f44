//! Unified audio-visual model: a weight-shared transformer classifier that
//! consumes either modality on its own, the stochastic single-modality
//! training loop that fits it, and probes that inspect its representations.

pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod augment;
mod binio;
pub mod checkpoint;
pub mod nn;
pub mod optim;
pub mod params;
pub mod probes;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use config::{FusionKind, LossKind, ModelConfig, ModelMode, TrainConfig};
pub use data::{Dataset, FeatureSequence, Label, Modality, PairedSample, Split};
pub use error::{Result, UavmError};
pub use model::{count_parameters_for, fuse_predictions, ForwardTrace, ParamCounts, Uavm};
pub use params::{ParamGroup, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
