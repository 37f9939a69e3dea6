//! Federated visible-light positioning: optical channel simulation, UE data
//! collection, a from-scratch CVPosNet regressor, FedAvg training and
//! evaluation against frozen and baseline learners.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod baselines;
pub mod config;
pub mod environment;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod optics;
pub mod rng;
pub mod sensing;

pub use error::{Error, Result};
