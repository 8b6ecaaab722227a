//! Network definition: configuration, layers, fusion and the full model.

pub mod config;
pub mod fusion;
pub mod layers;
mod model;
pub mod targets;

pub use config::{Architecture, BodyModelSource, NetConfig, PartSupervision, SamplingMode, SupervisionMode};
pub use fusion::{attention_fuse, pooling_fuse, spatial_attention};
pub use layers::Mode;
pub use targets::keypoint_heatmaps;
pub use model::{root_init_rotation, Forward, Network, Posed, Prediction};
