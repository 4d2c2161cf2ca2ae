//! Exposure mapping under network interference.

pub mod error;
pub mod estimators;
pub mod exposure;
pub mod fracq;
pub mod graph;
pub mod knn;
pub mod motif;
pub mod par;
pub mod randomization;
pub mod seeds;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
pub use graph::Graph;
