//! Unsupervised local image descriptors learned with restricted Boltzmann machines.
//!
//! The crate covers the whole pipeline: loading (or synthesizing) a
//! patch-correspondence corpus, preprocessing, training Gaussian RBMs (with
//! an optional lifetime-sparsity penalty) and mean-covariance RBMs, turning
//! trained models into real-valued or binary descriptors, and scoring them
//! with the 95% error rate matching benchmark.

pub mod cli;
pub mod config;
pub mod container;
pub mod dataset;
pub mod descriptor;
pub mod dump;
pub mod error;
pub mod eval;
pub mod grbm;
pub mod math;
pub mod mcrbm;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod rng;

pub use error::{Error, Result};
