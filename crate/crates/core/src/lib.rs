//! Neuron programming for U-shaped segmentation networks.
//!
//! This crate searches jointly over network architecture and per-node
//! neuron type (conventional vs quadratic), trains and evaluates the
//! resulting networks on vessel-style binary segmentation, and learns a
//! hypernetwork that predicts good genomes directly from depth/channel
//! parameters.
//!
//! All numerical code is generic over the scalar type: 64-bit builds drive
//! gradient checks and tests, 32-bit builds drive training runs.

pub mod checkpoint;
pub mod evolution;
pub mod genome;
pub mod gradcheck;
pub mod hypernet;
pub mod layers;
pub mod netbuilder;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod segtrain;
pub mod tensor;

pub use scalar::Scalar;

/// 64-bit tensor, the test-build element type.
pub type Tensor64 = tensor::Tensor<f64>;
/// 32-bit tensor, the run-build element type.
pub type Tensor32 = tensor::Tensor<f32>;
/// 64-bit network.
pub type Network64 = netbuilder::Network<f64>;
/// 32-bit network.
pub type Network32 = netbuilder::Network<f32>;
