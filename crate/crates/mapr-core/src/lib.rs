//! Point-cloud classification with intrinsic geometric feature augmentation,
//! consistency-regularized training, a suite of gradient-based adversarial
//! attacks, the SOR defense, and a reproducible evaluation harness over
//! synthetic shape benchmarks.

pub mod attacks;
pub mod cloud;
pub mod data;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod model;
pub mod perturb;
pub mod report;
pub mod rng;
pub mod shapes;
pub mod tensor;
pub mod train;

pub use cloud::PointCloud;
pub use error::{Error, Result};
