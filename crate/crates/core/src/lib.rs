//! Deterministic simulator for federated few-shot learning.
//!
//! The pipeline partitions a labelled pool into few-shot client shards, trains
//! softmax-regression or MLP learners locally, averages them with FedAvg, and
//! optionally adds Gaussian noise (with an RDP accountant), pairwise-mask
//! secure aggregation, energy-aware client scheduling and a server-side
//! meta-adaptation step. All randomness derives from one master seed per run.

// Range checks are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod fed;
pub mod fewshot;
pub mod metrics;
pub mod model;
pub mod privacy;
pub mod rng;
pub mod scenario;
pub mod sched;
pub mod secure_agg;
pub mod train;

pub use error::{Error, Result};
