//! Deep probabilistic movement primitives.
//!
//! A trajectory is summarized by a latent vector `z`. Via-points and context
//! observations are each encoded into a diagonal Gaussian message about `z`,
//! and the messages are fused with the standard-normal prior by summing
//! precisions. A decoder network maps `(z, phase)` to a configuration. The
//! model is trained variationally and supports generation, conditioning,
//! latent refinement, blending, and linear or rhythmic time modulation.
//!
//! Baselines (ProMP and the CNMP family) and synthetic datasets live
//! alongside the model so they can be compared on the same metrics.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod checkpoint;
pub mod core_math;
pub mod data;
pub mod error;
pub mod latent_bayes;
pub mod model;
pub mod phase;

pub use error::{Error, Result};
