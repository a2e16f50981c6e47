//! Copula-coupled graph regression.
//!
//! Node outcomes are modeled as a Gaussian copula whose precision matrix follows
//! the graph, combined with per-node Normal or Poisson marginals whose location
//! comes from a small graph network (MLP, GCN or GraphSAGE). The crate also ships
//! a latent-space synthetic data generator and an experiment harness.

pub mod autodiff;
pub mod copula;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod marginals;
pub mod metrics;
pub mod model;
pub mod matrix;
pub mod nets;
pub mod normal;
pub mod par;
pub mod params;
pub mod stats;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::Graph;
pub use matrix::DenseMatrix;
