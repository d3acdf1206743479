//! Deterministic desk-scale simulator for cloud-assisted federated
//! fine-tuning with zeroth-order gradient rectification.
//!
//! Clients estimate gradients from two forward passes at seed-addressed
//! perturbations and upload a single scalar per probe; the edge regenerates
//! the perturbations, reconstructs and aggregates the gradient estimates,
//! and applies one global step per round. A cloud replica trains with
//! backprop on a public split and periodically broadcasts guided
//! perturbations sampled from its recent-gradient subspace, which clients
//! mix into their local draws. Layer-wise pipelining and adaptive
//! quantization of the guided chunks are modeled by deterministic latency
//! and memory models rather than real networking.
//!
//! ## Module map
//!
//! - [`model`] — logistic / one-hidden-layer MLP stand-ins with exact
//!   backprop.
//! - [`rng`] — addressable counter-based Gaussian streams (the regeneration
//!   contract behind scalar-loss upload).
//! - [`zoo`] — the two-point antithetic estimator, hybrid perturbations, and
//!   gradient reconstruction.
//! - [`guidance`] — cloud backprop, gradient-history subspace, guided
//!   sampling, adaptive mixing weight.
//! - [`analysis`] — closed-form MSE/speed-up/accuracy tradeoffs plus Monte
//!   Carlo and descent oracles.
//! - [`federation`] — the three-tier protocol as deterministic state
//!   machines over an in-process bus.
//! - [`pipeline`] — layer-wise pipeline latency (analytic and event-driven)
//!   and client memory models.
//! - [`compression`] — the b-bit chunk codec and the adaptive
//!   compression-proportion controller.
//! - [`data`] / [`config`] / [`metrics`] / [`harness`] — datasets and
//!   Dirichlet partitioning, run configuration, metrics output, experiment
//!   orchestration.
//!
//! ## Runnable examples
//!
//! ```text
//! cargo run --release -p fedrect --example estimator_tradeoff
//! cargo run --release -p fedrect --example seeded_streams
//! cargo run --release -p fedrect --example single_round_trace
//! cargo run --release -p fedrect --example zgr_vs_zoo
//! cargo run --release -p fedrect --example pipeline_overlap
//! cargo run --release -p fedrect --example quantized_chunks
//! cargo run --release -p fedrect --example dirichlet_partition
//! ```
//!
//! The `fedrect` binary exposes the same functionality as `run`, `analyze`,
//! `pipeline`, and `sweep` subcommands.

pub mod analysis;
pub mod compression;
pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod guidance;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod zoo;

pub use error::{Error, Result};
