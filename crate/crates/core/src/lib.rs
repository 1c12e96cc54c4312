//! Preference-based reward learning from suboptimal, options-level
//! demonstrations of a two-team capture-the-flag game.

// Validation writes `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bc;
pub mod error;
pub mod eval;
pub mod game;
pub mod neuro;
pub mod options;
pub mod pairs;
pub mod pipeline;
pub mod reward;
pub mod seed;
pub mod service;
pub mod sim;
pub mod traj;

pub use error::{Error, Result};
