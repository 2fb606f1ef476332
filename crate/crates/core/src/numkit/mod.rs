//! Dense row-major matrices and a reverse-mode differentiation tape.
//!
//! The tape is eager: every operation computes its value immediately and
//! records enough state to run one backward sweep. Handles ([`Node`]) are
//! plain copyable ids into the tape arena.

mod matrix;
mod param;
mod tape;

pub use matrix::Matrix;
pub use param::Param;
pub use tape::{Activation, GatHeadCoeffs, Node, Tape};

use thiserror::Error;

/// Errors raised by matrix construction and tape operations.
#[derive(Debug, Error)]
pub enum NumKitError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyDims { rows: usize, cols: usize },
    #[error("data length {len} does not fill a {rows}x{cols} matrix")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("{op}: expected a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("leaky_relu slope must lie in (0, 1), got {0}")]
    InvalidSlope(f64),
    #[error("backward requires a 1x1 loss node, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("backward already ran on this tape; call zero_grads to reset")]
    BackwardAlreadyRun,
    #[error("tape node ordering violated (node {child} depends on {parent}); graph is not a DAG")]
    CycleDetected { child: usize, parent: usize },
    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroNormRow { row: usize },
    #[error("gat_attention_head: {0}")]
    BadNeighborhood(String),
    #[error("probability {p} outside [0, 1]")]
    BadProbability { p: f64 },
}
