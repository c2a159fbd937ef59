//! Social-graph invariant learning for recommendation.
//!
//! The engine simulates several noisy versions of a social graph by learned,
//! stochastic edge dropout, trains user and item embeddings so that the
//! recommendation loss is low on average and stable across those versions,
//! and evaluates with full-ranking Recall@N / NDCG@N.
//!
//! Module map:
//! - [`data`]: loading, splitting, noise injection, sparsity buckets
//! - [`numerics`]: dense/CSR kernels, gradient tape, Adam
//! - [`encoder`]: LightGCN-style propagation over users, items and social links
//! - [`environments`]: per-environment edge generators and concrete relaxation
//! - [`objectives`]: in-batch softmax, BPR, variance penalty, HSIC, filters
//! - [`trainer`]: the training loop, checkpoints and inference
//! - [`evaluator`]: metrics, reports and sweeps

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod encoder;
pub mod environments;
pub mod error;
pub mod evaluator;
pub mod numerics;
pub mod objectives;
pub mod rng;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
