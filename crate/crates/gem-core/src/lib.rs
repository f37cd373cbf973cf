//! Pipeline for explaining graph neural network predictions with compact
//! subgraphs: train small GCN classifiers, distill per-edge causal
//! ground-truth explanations by perturbation, train a graph auto-encoder
//! that generates explanation masks inductively, and score the results.

pub mod cli;
pub mod config;
pub mod datasets;
pub mod distill;
pub mod error;
pub mod evaluation;
pub mod explainer;
pub mod gnn;
pub mod graph;
pub mod numerics;
pub mod pipeline;
pub mod rng;

pub use error::{GemError, Result};
