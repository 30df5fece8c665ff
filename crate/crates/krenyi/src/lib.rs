//! Kernelized Renyi information estimators and information-theoretic
//! generalization-bound experiments for SGD/SGLD on small networks.
//!
//! The crate is organized around the pipeline the CLI drives:
//!
//! * [`matrix`] — dense symmetric eigendecomposition and spectral functions;
//! * [`kernel`] — Gram matrices, entropy / mutual-information estimators and
//!   their analytic oracles;
//! * [`nn`] — a small fully connected network with manual backpropagation and
//!   per-sample gradients;
//! * [`train`] — SGD/SGLD training loops with full trajectory recording;
//! * [`bounds`] — gradient statistics and every bound variant;
//! * [`data`] — synthetic tasks, IDX loading, label corruption;
//! * [`experiment`] — multi-run orchestration producing a [`bounds::BoundReport`];
//! * [`report`] — CSV/JSON/SVG emission.

pub mod bounds;
pub mod data;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod matrix;
pub mod nn;
pub mod report;
pub mod selftest;
pub mod train;

pub use error::{Error, Result};
