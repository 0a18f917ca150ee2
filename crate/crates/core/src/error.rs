use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("tensor format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("box footprint lies entirely outside the grid extent")]
    OutOfExtent,

    #[error("anchor {0} lies outside the grid")]
    Bounds(String),

    #[error("degenerate embedding: row {row} of {side} has norm below 1e-12")]
    DegenerateEmbedding { side: &'static str, row: usize },

    #[error("contrastive loss needs at least 2 instances, got {0}")]
    InsufficientNegatives(usize),

    #[error("no valid instances to distill")]
    EmptyInstances,

    #[error("empty batch")]
    EmptyBatch,

    #[error("instance bank is empty")]
    EmptyBank,

    #[error("could not place {wanted} non-overlapping objects (placed {placed})")]
    Placement { wanted: usize, placed: usize },

    #[error("encoder kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: &'static str, got: &'static str },

    #[error("score matrix of {0} entries exceeds the memory guard")]
    MemoryGuard(usize),

    #[error("rope table holds {capacity} positions, {requested} requested")]
    RopeOverflow { capacity: usize, requested: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
