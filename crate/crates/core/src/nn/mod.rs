//! Small fixed-architecture networks with hand-written reverse-mode
//! gradients: ReLU perceptrons, the tanh-squashed Gaussian head, softmax
//! cross-entropy, Adam, and a finite-difference gradient checker.
//!
//! Everything is generic over [`Real`] so training can run in `f32` while
//! gradient verification runs in `f64`.

mod adam;
mod gaussian;
mod gradcheck;
mod loss;
mod mlp;
mod real;

pub use adam::{Adam, AdamConfig};
pub use gaussian::{gaussian_rsample, GaussianHeadOutput, HeadGrad, LOG_STD_MAX, LOG_STD_MIN};
pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use loss::{cross_entropy, log_softmax_rows, softmax_cross_entropy_batch, CrossEntropyBatch};
pub use mlp::{BackwardMode, Dense, DenseGrad, ForwardCache, GradBundle, Mlp};
pub use real::Real;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
}
