//! Training losses.
//!
//! Classification is binary cross-entropy on the head's probability.
//! Alignment between the two modality embeddings is a symmetric
//! temperature-scaled InfoNCE over the batch: each peptide's sequence
//! embedding should pick out its own structure embedding among all others,
//! and vice versa. The hybrid loss is their weighted sum.

use crate::numkit::{Node, NumKitError};
use crate::{Real, Tape};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("contrastive loss needs at least 2 pairs, got {n}")]
    BatchTooSmall { n: usize },
    #[error("batch sides differ: {seq} sequence vs {structure} structure embeddings")]
    MismatchedBatch { seq: usize, structure: usize },
    #[error("temperature must be positive and finite, got {0}")]
    BadTau(f64),
    #[error("lambda must be non-negative and finite, got {0}")]
    BadLambda(f64),
    #[error("label must be 0 or 1, got {0}")]
    BadLabel(u8),
    #[error("vectors have different lengths: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,
    #[error(transparent)]
    Tape(#[from] NumKitError),
}

/// Loss weights shared across the trainer and the CLI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// InfoNCE temperature.
    pub tau: Real,
    /// Weight of the contrastive term in the hybrid loss.
    pub lambda: Real,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.07,
            lambda: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(LossError::BadTau(self.tau));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(LossError::BadLambda(self.lambda));
        }
        Ok(())
    }
}

/// Plain cosine similarity between two equal-length vectors.
pub fn cosine_sim(u: &[Real], v: &[Real]) -> Result<Real, LossError> {
    if u.len() != v.len() {
        return Err(LossError::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let dot: Real = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: Real = u.iter().map(|a| a * a).sum::<Real>().sqrt();
    let nv: Real = v.iter().map(|b| b * b).sum::<Real>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(LossError::ZeroVector);
    }
    Ok(dot / (nu * nv))
}

/// Symmetric InfoNCE over a batch of pooled embedding pairs (each a `1 x d`
/// node). With `S'` the cosine-similarity matrix divided by `tau`, the loss
/// is the average over both retrieval directions of
/// `logsumexp_j(S'_ij) - S'_ii`, i.e. cross-entropy against the matched
/// diagonal. Needs at least two pairs to have negatives.
pub fn info_nce(
    tape: &Tape,
    z_seq: &[Node],
    z_struct: &[Node],
    tau: Real,
) -> Result<Node, LossError> {
    if z_seq.len() != z_struct.len() {
        return Err(LossError::MismatchedBatch {
            seq: z_seq.len(),
            structure: z_struct.len(),
        });
    }
    let n = z_seq.len();
    if n < 2 {
        return Err(LossError::BatchTooSmall { n });
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(LossError::BadTau(tau));
    }

    let zs = tape.stack_rows(z_seq)?;
    let zg = tape.stack_rows(z_struct)?;
    let ns = tape.row_l2_normalize(zs)?;
    let ng = tape.row_l2_normalize(zg)?;
    let sim = tape.matmul(ns, tape.transpose(ng))?;
    let scaled = tape.scale(sim, 1.0 / tau);

    // seq -> struct retrieval: rows; struct -> seq: columns
    let row_side = tape.sum_all(tape.row_logsumexp(scaled));
    let col_side = tape.sum_all(tape.row_logsumexp(tape.transpose(scaled)));
    let diag = tape.trace(scaled)?;
    let total = tape.sub(tape.add(row_side, col_side)?, tape.scale(diag, 2.0))?;
    Ok(tape.scale(total, 1.0 / (2.0 * n as Real)))
}

/// Binary cross-entropy of a 1x1 probability node against a 0/1 label.
pub fn bce(tape: &Tape, p: Node, label: u8) -> Result<Node, LossError> {
    if label > 1 {
        return Err(LossError::BadLabel(label));
    }
    Ok(tape.bce(p, Real::from(label))?)
}

/// Scalar values of the combined loss, for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: Real,
    pub classification: Real,
    pub contrastive: Real,
}

/// `total = classification + lambda * contrastive`. When `lambda` is zero or
/// no contrastive node is supplied, the classification node itself is
/// returned: the contrastive term contributes nothing to the graph, so
/// gradients are bitwise those of the classification loss alone.
pub fn hybrid(
    tape: &Tape,
    classification: Node,
    contrastive: Option<Node>,
    lambda: Real,
) -> Result<(Node, LossBreakdown), LossError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(LossError::BadLambda(lambda));
    }
    let cls = tape.scalar_value(classification);
    match contrastive {
        Some(con) if lambda > 0.0 => {
            let weighted = tape.scale(con, lambda);
            let total = tape.add(classification, weighted)?;
            Ok((
                total,
                LossBreakdown {
                    total: tape.scalar_value(total),
                    classification: cls,
                    contrastive: tape.scalar_value(con),
                },
            ))
        }
        _ => Ok((
            classification,
            LossBreakdown {
                total: cls,
                classification: cls,
                contrastive: 0.0,
            },
        )),
    }
}
