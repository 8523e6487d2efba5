//! Influence maximization with a learned seed-set latent space.
//!
//! The crate covers the whole experiment loop on a single graph:
//!
//! - [`graph`]: compressed-row digraphs, edge-list loading, generators.
//! - [`diffusion`]: IC / LT / SIS simulators, Monte-Carlo estimates and an
//!   exact IC oracle for tiny graphs.
//! - [`dataset`]: training corpora of `(seed set, per-node frequency, spread)`.
//! - [`autograd`]: a small reverse-mode engine with Adam and checkpoints.
//! - [`models`]: seed autoencoder, monotone attention surrogate, student.
//! - [`trainer`]: joint training with the non-negativity projection.
//! - [`inference`]: latent-space projected gradient search under budgets.
//! - [`baselines`]: greedy, CELF, degree top-k and RIS greedy.
//! - [`harness`]: staged pipeline, evaluation tables and timing.

pub mod autograd;
pub mod baselines;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod graph;
pub mod harness;
pub mod inference;
pub mod models;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};
pub use seeds::SeedVector;
