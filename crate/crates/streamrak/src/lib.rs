//! Streaming multi-resolution kernel ridge regression.
//!
//! The estimator is a Laplacian pyramid of Gaussian-kernel correction terms:
//! each level fits the residuals of the levels above it with a kernel of
//! halved bandwidth. Landmarks for each level are sub-sampled from a damped
//! cover tree that is built online from the data stream, and the per-level
//! ridge systems are sketched incrementally so memory never grows with the
//! number of samples. A FALKON-style preconditioned conjugate-gradient solve
//! turns each sketched system into pyramid coefficients.
//!
//! The crate is organized around the pipeline stages:
//!
//! * [`kernel`] — Gaussian kernel, bandwidth schedule, kernel matrices.
//! * [`dct`] — the damped cover tree (streaming sub-sampler).
//! * [`accumulator`] — streaming sketches of the per-level linear system.
//! * [`solver`] — preconditioner and conjugate-gradient solve.
//! * [`pyramid`] — the multi-level model and its evaluation.
//! * [`orchestrator`] — the streaming pipeline tying the above together.
//! * [`baselines`] — exact KRR, Laplacian-pyramid KRR and single-level
//!   FALKON reference fits for benchmarks.
//! * [`bench`] — dataset generators, the double-pendulum simulator and the
//!   benchmark error metric.

pub mod accumulator;
pub mod baselines;
pub mod bench;
pub mod config;
pub mod dct;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod orchestrator;
pub mod pyramid;
pub mod solver;

pub use accumulator::{LevelAccumulator, Phase};
pub use config::{R0Policy, RunConfig};
pub use dct::{DctTree, Disposition, InsertOutcome, TreeStats};
pub use error::{Error, Result};
pub use kernel::{bandwidth_at_level, gaussian_kernel, kernel_cross_matrix, Bandwidth, PointBlock};
pub use orchestrator::{LifecycleEvent, PipelineState, StreamSample};
pub use pyramid::{LevelModel, PyramidModel};
pub use solver::{build_preconditioner, conjugate_gradient, solve_level, LevelSolution, Preconditioner};
