//! Federated meta-learning with an inexact ADMM solver.
//!
//! Clients hold support/query splits of a local task; the server learns a
//! meta-model θ from which each client adapts by a few gradient steps. The
//! engine alternates closed-form local updates built from a first-order
//! Hessian-vector estimator, dual ascent, and a regularized server
//! aggregation that can pull θ toward a pretrained model.

// `!(x > 0.0)` is used on purpose so NaN fails range checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diagnostics;
pub mod engine;
pub mod harness;
pub mod error;
pub mod models;
pub mod regularizers;
pub mod rng;
pub mod selftest;
pub mod tasks;
pub mod vector;

pub use data::{Dataset, Sample};
pub use engine::{AlgoConfig, Algorithm, Engine, EvalSchedule, FederationState, RunOutput, RunSetup};
pub use error::{Error, Result};
pub use models::{LossFn, LossModel};
pub use regularizers::Regularizer;
pub use tasks::{ClientRecord, Federation, FederationConfig};
pub use vector::ParamVector;
