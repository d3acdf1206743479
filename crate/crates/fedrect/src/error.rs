//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the simulator and its building blocks.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value. The message names the offending key path.
    #[error("configuration error: {0}")]
    Config(String),

    /// Dimension or layout mismatch between two pieces of data.
    #[error("shape error: {0}")]
    Shape(String),

    /// A stream of length zero was requested.
    #[error("empty request: {0}")]
    EmptyRequest(&'static str),

    /// A guided perturbation was required but no usable subspace exists.
    #[error("guidance unavailable: subspace dimension is 0 while alpha = {alpha} < 1")]
    GuidanceUnavailable { alpha: f64 },

    /// The gradient history produced no usable basis vectors.
    #[error("empty basis: all history vectors degenerate")]
    EmptyBasis,

    /// A loss or parameter value left the finite range.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Argument outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Estimator statistics are degenerate for the requested quantity.
    #[error("degenerate stats: {0}")]
    DegenerateStats(String),

    /// The oracle error term is zero, so the speed-up ratio diverges.
    #[error("speed-up ratio unbounded: surrogate bias and variance are both zero")]
    UnboundedSpeedup,

    /// A client failed to report within a round.
    #[error("straggler: missing loss report from client {client_id} (round {round})")]
    Straggler { client_id: u32, round: u64 },

    /// A serialized block or trace record could not be decoded.
    #[error("decode error: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
