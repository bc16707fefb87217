//! Ordinal mixed-effects random forests (OMERF).
//!
//! A regression forest estimates the nonlinear fixed part of a cumulative
//! logit model while a cumulative link mixed model, fitted with the forest
//! output as an offset, estimates group-level random effects. The two are
//! alternated until the random effects stop moving.

pub mod benchmark;
pub mod clmm;
pub mod data;
pub mod error;
pub mod forest;
pub mod link;
pub mod metrics;
pub mod omerf;
pub mod par;
pub mod persist;
pub mod seeding;
pub mod sim;

pub use error::{OmerfError, Result};
