//! Temporal action segmentation with boundary-driven refinement.
//!
//! A shared dilated temporal convolutional extractor feeds two multi-stage
//! branches: one predicts per-frame class probabilities, the other predicts
//! class-agnostic action boundaries. At inference the predicted boundaries
//! split the video into segments and each segment takes the majority class
//! of the frame-wise prediction.
//!
//! Modules:
//! - [`data`], [`io`], [`synth`]: videos, labels, segments, file formats and
//!   synthetic datasets
//! - [`tcn`]: the network, its exact gradients and checkpoints
//! - [`losses`]: training objectives
//! - [`refine`]: boundary selection, refinement and baseline postprocessors
//! - [`metrics`]: accuracy, edit score, segmental F1 and boundary F1
//! - [`train`]: Adam, the training loop, evaluation and ablation sweeps

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod io;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod par;
pub mod refine;
pub mod scalar;
pub mod synth;
pub mod tcn;
pub mod train;

pub use data::{
    boundaries_from_labels, median_frequency_weights, positive_boundary_weight,
    segments_from_labels, BoundaryMask, ClassId, ClassMap, ClassWeights, Dataset, DatasetSplit,
    Segment, VideoSample,
};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;
pub use tcn::{AsrfModel, HeadGrads, ModelConfig, Outputs};
