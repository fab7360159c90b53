//! Correlation-aware losses for long-tailed classification.
//!
//! The crate estimates a row-stochastic class correlation matrix from a
//! model's validation predictions, refreshes it with an exponential moving
//! average between epochs, and feeds it into a softmax loss whose
//! denominator down-weights classes correlated with the ground truth. A
//! class-balanced (effective number) re-weighting can be stacked on top.
//!
//! Modules:
//!
//! - [`types`]: validated domain types
//! - [`pcm`]: correlation matrix estimation and update
//! - [`loss`]: CE / PC / CB / CB_PC values and analytic gradients
//! - [`model`]: linear softmax classifier and the alternating training loop
//! - [`datagen`]: synthetic long-tailed data with correlated class groups
//! - [`metrics`]: recall@K, mean recall@K, confusion matrices
//!
//! All arithmetic is `f64`. Every random draw comes from a seeded ChaCha8
//! stream, so identical inputs give bit-identical outputs.

pub mod datagen;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod pcm;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    argmax, CorrelationMatrix, GradientVector, LabelSpace, LogitRecord, ProbabilityVector,
};
