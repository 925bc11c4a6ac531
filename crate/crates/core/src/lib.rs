//! Online learning on top of frozen dense networks.
//!
//! A frozen autoencoder turns 40-sample accelerometer windows into an
//! embedding and a reconstruction. Two kinds of head are trained one sample
//! at a time on top of it: a regression head that fine-tunes the final layer
//! against reconstruction targets, and a softmax classifier that adds output
//! classes as new labels arrive.

pub mod error;
pub mod fan_sim;
pub mod head;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod stats;
pub mod trainer;

mod codec;

pub use error::{Error, Result};
pub use fan_sim::{apply_drift, fit_preproc, DriftConfig, FanMode, FanStream, SignalParams, StreamWindow};
pub use head::{GradRule, Head, RegressionHead, SoftmaxHead};
pub use metrics::{ConfusionMatrix, MseAccumulator, MseSummary};
pub use model::{load_model, reconstruction_error, save_model, FrozenModel, Layer, Preproc};
pub use numeric::{Activation, RealMat, Rng};
pub use pipeline::{bench_iteration, BenchMode, Pipeline, PipelineMode, StepReport, TimingSummary};
pub use stats::RunningStats;
pub use trainer::{train_autoencoder, train_softmax_offline, Dataset, TrainConfig};
