//! Numeric substrate: dense matrices, a reverse-mode tape, ReLU perceptrons,
//! Adam, and a finite-difference gradient checker. Everything is `f64`.

mod adam;
mod gradcheck;
mod matrix;
mod mlp;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use matrix::Matrix;
pub use mlp::{Layer, MlpParams, MlpVars, MLP_FORMAT_VERSION};
pub use tape::{sigmoid, softplus, SlotGrads, Tape, Var};
