//! Synthetic latent-feature contextual bandit benchmark.
//!
//! The crate builds personalization environments whose rewards are the cosine
//! similarity of randomly generated latent features, trains bandit versions
//! of DQN, A2C and PPO on the raw and on k-means-abstracted state spaces, and
//! scores them with the normalized return that maps the uniformly random
//! policy to 0 and the optimal policy to 1.

pub mod agents;
pub mod cluster;
pub mod config;
pub mod diagnostics;
pub mod dump;
pub mod env;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod matrix;
pub mod nn;
pub mod report;
pub mod rng;
pub mod svg;

pub use error::{Error, Result};
