//! Multiscale tree-structured Bayesian shrinkage.
//!
//! Wavelet (Daubechies-4) and 8x8 block-DCT coefficients are organised into
//! quadtrees. Each level of each tree carries gamma-process shrinkage weights
//! whose normalised increments set the Dirichlet concentrations of the next
//! level, so large parents encourage large children. Inference is provided by
//! a Metropolis-within-Gibbs sampler ([`sampler`]) and by deterministic
//! moment-matching / EM schemes ([`variational`]). The same machinery models
//! spiky-plus-Gaussian measurement noise for robust denoising.

pub mod design;
pub mod error;
pub mod measurement;
pub mod model;
pub mod randmath;
pub mod sampler;
pub mod transform;
pub mod variational;

pub use error::{Error, Result};
