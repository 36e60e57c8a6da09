//! Trapped-ion qubit readout workbench.
//!
//! Simulates fluorescence photon-count trajectories from a two-state hidden
//! Markov process, discriminates bright and dark states with threshold,
//! maximum-likelihood and neural classifiers, and emulates the embedded
//! fixed-point inference path together with its TTL counting front end.
//!
//! Data-parallel loops (dataset generation, batch evaluation, gradient
//! accumulation, experiment sweeps) run on rayon when the `parallel` feature
//! is enabled and fall back to plain iterators otherwise. Results are
//! identical either way: every work item owns a seed derived from its index,
//! and reductions run in a fixed order.

// `!(x > 0.0)` style guards are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bench;
pub mod error;
pub mod exec;
pub mod kv;
pub mod nn;
pub mod physics;
pub mod quant;
pub mod rng;

pub use error::{Error, Result};
pub use exec::Execution;
pub use physics::{LabeledDataset, PhotonTrajectory, PhysicsParams, State};
