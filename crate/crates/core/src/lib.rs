//! Shapes represented as generated SVM training sets.
//!
//! A network emits a small labeled point set per shape; a Gaussian-kernel SVM fitted on
//! those points defines the surface as its decision boundary. The SVM solve is
//! differentiable, so the point generator, the task-conditioned embedding and the
//! sigmoid scale are trained end to end through it.

pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod geom;
mod mc_tables;
pub mod metrics;
pub mod nets;
pub mod shapes;
pub mod svm;
pub mod surface;
pub mod svm_diff;
pub mod trainer;

pub use error::{Error, Result};
