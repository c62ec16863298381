//! Generative voxel-shape classification toolkit: a 3D convolutional VAE
//! with an MLP prediction head, reverse-mode autodiff, gradient-based
//! latent-space navigation, Laplacian Eigenmaps visualization, synthetic
//! two-class shape data, and voxel volume metrics.
//!
//! Numeric kernels are generic over [`scalar::Scalar`]; the `f64`-backed
//! aliases below are the default precision used by training and the file
//! formats.

pub mod conv;
pub mod data;
pub mod embed;
pub mod error;
pub mod fdcheck;
pub mod layers;
pub mod nav;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod vae;
pub mod vxg;

pub use error::{Error, Result};

/// Default-precision (f64) aliases.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph64 = tape::Graph<f64>;
pub type Parameter64 = layers::Parameter<f64>;
pub type VaeModel64 = vae::VaeModel<f64>;
pub type LatentCode64 = vae::LatentCode<f64>;
pub type VoxelSample64 = data::VoxelSample<f64>;
pub type NavigationTrace64 = nav::NavigationTrace<f64>;
pub type Embedding2D64 = embed::Embedding2D<f64>;

/// Single-precision aliases for callers that trade accuracy for memory.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph32 = tape::Graph<f32>;
pub type VaeModel32 = vae::VaeModel<f32>;
