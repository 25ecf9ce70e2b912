//! Penalized likelihood estimation with nonconcave penalties.
//!
//! The crate provides penalty families and their scalar thresholding rules,
//! GLM and Cox likelihoods, a local quadratic approximation solver, GCV tuning
//! with sandwich standard errors, covariance estimators, q-class classification
//! losses and a simulation harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance;
pub mod cox;
pub mod error;
pub mod harness;
pub mod likelihoods;
pub mod linalg;
pub mod lqa;
pub mod penalty;
pub mod qloss;
pub mod tuning;

pub use error::{Error, Result};
