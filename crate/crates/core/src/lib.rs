//! Bayesian reward models for preference learning.
//!
//! A small, fully deterministic laboratory for:
//!
//! * LoRA-structured scalar reward networks trained on Bradley-Terry
//!   preference pairs ([`reward_model`]),
//! * a post-hoc linearized Laplace posterior over the trainable adapter and
//!   head parameters ([`laplace`]),
//! * uncertainty-penalized and ensemble reward scoring ([`scoring`]),
//! * the exact fixed-pool best-of-n estimator and its KL accounting ([`bon`]),
//! * a synthetic gold/proxy world that exhibits reward overoptimization
//!   under best-of-n selection ([`synthetic`]).
//!
//! All arithmetic is `f64` and dense. Every random draw goes through
//! [`numerics::SeededGenerator`], so datasets, training runs and experiment
//! tables regenerate bit-exactly from their seeds.

pub mod bon;
pub mod cli;
mod error;
pub mod io;
pub mod laplace;
pub mod numerics;
pub mod reward_model;
pub mod scoring;
pub mod synthetic;
pub mod verify;

pub use error::{Error, Result};
