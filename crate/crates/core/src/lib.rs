//! Temporal-aware triple-attention graph networks for fraud detection on
//! directed transaction graphs.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: a small reverse-mode AD engine over dense matrices.
//! - [`graph_data`]: transaction graphs, Elliptic-style file ingestion, splits.
//! - [`temporal`]: per-edge temporal embeddings.
//! - [`attention`]: structural, temporal and global attention with adaptive fusion.
//! - [`model`]: ATGAT, its ablation variants, GCN and logistic regression.
//! - [`training`]: weighted BCE, AdamW, cosine annealing, the training loop.
//! - [`metrics`]: ROC AUC, threshold metrics, Cohen's d, ablation harness.
//! - [`synth`]: synthetic temporal transaction graphs with fraud signatures.
//! - [`diagnostics`]: the gradient-check suite and its fixture graph.
//! - [`app`]: config files and the command implementations behind the `atgat` binary.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod app;
pub mod attention;
pub mod autodiff;
pub mod diagnostics;
pub mod error;
pub mod graph_data;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod temporal;
pub mod training;

pub use error::{Error, Result};
