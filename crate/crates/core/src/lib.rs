//! Budgeted unbiased client sampling for federated optimization.
//!
//! The server-side problem: each round, pick an expected `K` of `N` clients
//! and build an unbiased estimate of the full-participation model update
//! from the sampled uploads. This crate provides
//!
//! * [`sampling`] — the two sampling procedures (independent coin flips and
//!   fixed-size systematic sampling), closed-form optimal-probability
//!   solvers with box constraints, unbiased aggregation, and exact /
//!   Monte-Carlo variance diagnostics;
//! * [`kvib`] — the adaptive K-Vib sampler (follow-the-regularized-leader
//!   probabilities over a sorted cumulative-feedback store, mixed toward
//!   uniform) plus uniform and oracle-optimal baselines behind one trait;
//! * [`fedsim`] — a federated-averaging loop over synthetic heterogeneous
//!   logistic-regression clients, with oracle instrumentation that makes
//!   regret and variance exactly measurable;
//! * [`metrics`] — per-round records, dynamic regret, variance, and the
//!   CSV/JSON formats the experiment front-end consumes.
//!
//! Everything is deterministic under a root seed: independent ChaCha
//! substreams are fanned out per purpose, client, and round ([`rng`]).

pub mod error;
pub mod fedsim;
pub mod kvib;
pub mod metrics;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
pub use kvib::{ClientSampler, FeedbackStore, Hyper, KVibConfig, KVibSampler, SamplerSpec};
pub use sampling::{
    ClientWeights, FeedbackVector, InclusionProbabilities, Procedure, SampleOutcome, UpdateMatrix,
};
