//! Surrogate modeling toolkit for velocity fields on unstructured meshes.
//!
//! The model is a graph network whose message passing is the flow of an
//! energy-conserving Hamiltonian system on latent node/edge features, with
//! attention-derived inner products as the metric. Around it sit feature
//! normalization, spectral mesh partitioning, domain-decomposed training with
//! prediction aggregation, transfer learning, and a synthetic glacier-like
//! dataset generator for end-to-end experiments at desk scale.

pub mod attention;
pub mod bracket;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataprep;
pub mod dd;
pub mod delaunay;
pub mod eigen;
pub mod error;
pub mod graph;
pub mod nnet;
pub mod optim;
pub mod partition;
pub mod synthetic;
pub mod tape;
pub mod train;
pub mod util;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
