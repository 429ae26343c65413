//! Low-Tucker-rank autoregressive modeling for high-dimensional sequences.
//!
//! The crate provides:
//! - dense matrix/third-order-tensor algebra with Tucker decomposition and
//!   HOSVD ([`tensor`], [`matrix`], [`linalg`]);
//! - stationarity diagnostics, spectral dependence measures and synthetic
//!   sequence generators for VAR processes ([`var`]);
//! - the OLS / low-rank / low-Tucker-rank linear estimators with full-batch
//!   momentum gradient descent ([`estimators`]);
//! - the nonlinear TAR and two-lane TAR-2 networks with analytic
//!   backpropagation ([`tar`]);
//! - preprocessing, rolling one-step-ahead forecasting and evaluation
//!   metrics ([`pipeline`]);
//! - model persistence ([`model`]) and an experiment harness
//!   ([`experiments`]).

pub mod error;
pub mod estimators;
pub mod experiments;
pub mod linalg;
pub mod matrix;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod tar;
pub mod tensor;
pub mod var;

pub use error::{Error, Result};
