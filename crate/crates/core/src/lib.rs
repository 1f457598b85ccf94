//! GenHop: an unconditional image generative model built from whitening and
//! coloring transforms instead of trained networks.
//!
//! The model has three stages:
//!
//! 1. [`saab`]: a two-hop channel-wise Saab cascade whitens images into a small
//!    low-frequency subspace, splitting off high-frequency channels.
//! 2. [`seed`]: spatial PCA, k-means, per-cluster ICA and Gaussian histogram
//!    matching model that subspace, so new seeds can be drawn from white noise.
//! 3. [`lle`]: locally linear embedding restores the discarded high-frequency
//!    channels before the inverse Saab transforms color the seed back into an
//!    image.
//!
//! [`pipeline`] ties the stages together, and [`format`] reads and writes the
//! single-file model container.

pub mod color;
pub mod dataset;
mod error;
pub mod format;
pub mod linalg;
pub mod lle;
pub mod pipeline;
pub mod saab;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use lle::{LleCodebook, RegionSpec};
pub use pipeline::{GenHopConfig, GenHopModel, Preset};
pub use saab::{CascadeModel, HopConfig, SaabBasis};
pub use seed::{ClusterModel, SeedModel, SpatialPca};
pub use tensor::{BlockSpec, ImageTensor, Shape};
