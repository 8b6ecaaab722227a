//! Part-attention body regression at desk scale: a parametric body model,
//! camera and rasterizer, the attention-fusion network with its baselines,
//! losses and metrics, synthetic data, training and occlusion probing.

pub mod body_model;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod probe;
pub mod render;
pub mod rng;
pub mod train;

pub use error::{CoreError, Result};
