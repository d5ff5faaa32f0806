//! The hop-graph network: an edge-convolution backbone whose layers pool
//! point features into voxel parts, predict hop distances between every
//! pair of parts, and feed those predictions back through hop-aware
//! attention before revising the point features.
//!
//! Each layer runs, in order: [`point_feature_conv`] → [`part_max_pool`] →
//! [`part_conv`] → [`hop_head`] (+ [`hop_distance_loss`]) →
//! [`kernel_weights`] → [`hga_scores`] → [`hga_normalize`] →
//! [`hga_aggregate`] → [`revise_point_features`]. The descriptor is a
//! fusion MLP over all layers' point features followed by global pooling.

mod config;
mod export;
mod layers;
mod network;

pub use config::{parse_switch, KernelMode, LossMode, ModelConfig, PoolMode};
pub use export::{attention_csv, hop_csv};
pub use layers::{
    argmax_rows, gaussian_kernel, global_max_pool, hga_aggregate, hga_normalize, hga_scores,
    hop_distance_loss, hop_head, kernel_weights, pair_indices, part_conv, part_edge_features,
    part_max_pool, point_feature_conv, revise_point_features, Attention, HopHead, Linear,
    PairLinear, PartConv,
};
pub use network::{hop_hits, ForwardOptions, ForwardOutput, LayerOutput, Model};
