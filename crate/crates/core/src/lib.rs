//! Sample-adaptive acceleration for coarse-to-fine image generators.
//!
//! At a decision step the generator's two latest outputs yield two
//! high-frequency indicators; a small classifier maps them to a tail
//! strategy (skip the last steps, or drop the unconditional branch on
//! them). A deterministic toy generator stands in for the real model.

// `!(x > 0.0)` also rejects NaN, which is the point of those checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod decision;
pub mod error;
pub mod frequency;
pub mod imagecore;
pub mod labeling;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod strategies;
pub mod toygen;

pub use error::{Error, Result};
