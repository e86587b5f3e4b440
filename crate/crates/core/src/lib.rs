//! Episodic-curiosity exploration workbench.
//!
//! A reachability network scores how many steps separate two observations,
//! an episodic memory of embeddings turns that score into a novelty bonus,
//! and a PPO learner consumes the bonus alongside the task reward. Maze
//! environments, the ICM and Grid Oracle baselines and a seeded experiment
//! harness complete the loop.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod baselines;
pub mod curiosity;
pub mod env;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod rnet;

pub use error::{Error, Result};
