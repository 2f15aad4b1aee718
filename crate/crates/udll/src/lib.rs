//! Unsupervised deep local learning.
//!
//! This crate trains a convolutional autoencoder on an image collection,
//! builds a k-nearest-neighbor prior affinity graph from the pretrained
//! latent features in closed form, fine-tunes the network with an added
//! self-expressive layer under a locality-preserving loss, and finally
//! spectral-clusters the learned coefficient matrix. Clusterings are scored
//! with Hungarian-matched accuracy.
//!
//! The numerical core is plain `f64` with hand-written gradients; every
//! operation is deterministic for a fixed seed, and the data-parallel paths
//! (rayon, enabled by the default `parallel` feature) preserve bitwise
//! identical results because reduction orders never depend on thread count.

pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub(crate) mod par;
pub mod pipeline;
pub mod spectral;
pub mod tensor;

pub use error::UdllError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, UdllError>;
