//! Reinforcement learning with history-based environments and state abstractions.
//!
//! The crate covers finite MDP planning, surrogate MDPs built from abstractions,
//! tabular Q-learning on non-Markovian state processes, action binarization,
//! value-aggregation experiments and ordering of abstraction maps.

pub mod abstraction;
pub mod env;
pub mod error;
pub mod homomorphism;
pub mod mdp;
pub mod ordering;
pub mod planners;
pub mod policy;
pub mod qlearning;
pub mod report;
pub mod rng;
pub mod sequentialize;
pub mod stats;
pub mod vaexp;

pub use error::{Error, Result};
pub use mdp::FiniteMdp;

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
