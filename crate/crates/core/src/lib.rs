//! Self-supervised point cloud learning by predicting hop distances between
//! voxel parts.
//!
//! [`geometry`] loads, generates and augments clouds; [`partition`] derives
//! the part graph and its ground-truth hop distances; [`model`] is the
//! network on top of the [`autodiff`] engine; [`training`] runs
//! pretraining, linear probing, evaluation and ablation sweeps.

// `!(a <= b)` checks are written to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod error;
pub mod geometry;
pub mod model;
pub mod partition;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{Dataset, DatasetSpec, PointCloud, Sample};
pub use model::{ForwardOptions, ForwardOutput, Model, ModelConfig};
pub use partition::{ground_truth, HopMatrix, Partition};
pub use training::{Checkpoint, Metrics, TrainConfig};
