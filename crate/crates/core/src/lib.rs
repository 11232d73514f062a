//! Deterministic simulator of an integrated terrestrial-satellite NOMA
//! downlink with edge caching, and a multi-agent deterministic
//! policy-gradient trainer that learns user association, power control and
//! cache placement.
//!
//! Module map:
//!
//! - [`config`]: scenario parameters and validation.
//! - [`topology`]: node placement and link geometry.
//! - [`channel`]: Rayleigh terrestrial links, satellite beam-gain links.
//! - [`state`]: association matrix, power-control vector, constraint audit.
//! - [`link`]: SINR, rate and energy efficiency.
//! - [`caching`]: Zipf popularity, cache pools, hit rate, retrieval power.
//! - [`env`]: the resource-allocation and cache-placement environments.
//! - [`neural`]: dense networks, reverse-mode gradients, Adam.
//! - [`maddpg`]: centralized-critic actor-critic trainer.
//! - [`baselines`]: random, greedy, exhaustive and single-agent comparators.
//! - [`metrics`]: CSV metrics sink.
//! - [`experiment`]: training and scoring drivers.
//! - [`checks`]: invariant checks used by the self-check and tests.
//! - [`exec`]: parallel/sequential execution switch.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod caching;
pub mod channel;
pub mod checks;
pub mod config;
pub mod env;
pub mod exec;
pub mod experiment;
pub mod link;
pub mod maddpg;
pub mod metrics;
pub mod neural;
pub mod state;
pub mod topology;

pub use config::{NetworkConfig, Validated};
pub use exec::ExecMode;
