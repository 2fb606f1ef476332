//! Cross-modal fusion.
//!
//! Scaled dot-product co-attention runs in both directions with six separate
//! projection matrices: sequence rows query structure keys/values to produce
//! the fused sequence features, and symmetrically structure rows query the
//! sequence. The row-stochastic attention matrices are kept for export.

use crate::numkit::{Node, NumKitError};
use crate::{Matrix, Real, Tape};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("co-attention inputs must share a shape, got {left:?} and {right:?}")]
    InputShapes {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("projection {name} must be {expected:?}, got {found:?}")]
    ProjectionShape {
        name: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("pooled inputs to the classifier must be single rows, got {rows} rows")]
    NotPooled { rows: usize },
    #[error("attention row {row} sums to {sum}, not 1")]
    RowNotStochastic { row: usize, sum: f64 },
    #[error("attention entry ({row}, {col}) = {value} outside [0, 1]")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("{axis} labels: {labels} provided for {size} rows/cols")]
    LabelCount {
        axis: &'static str,
        labels: usize,
        size: usize,
    },
    #[error(transparent)]
    Tape(#[from] NumKitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Sequence,
    Structure,
}

impl Modality {
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Sequence => "sequence",
            Modality::Structure => "structure",
        }
    }
}

/// One direction of co-attention, annotated for humans: a row-stochastic
/// weight matrix whose rows are queries and columns keys, with display
/// labels on both axes. Constructing one re-checks the invariants, so a map
/// in hand is always exportable as-is.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    weights: Matrix,
    query_modality: Modality,
    key_modality: Modality,
    query_labels: Vec<String>,
    key_labels: Vec<String>,
}

impl AttentionMap {
    pub fn new(
        weights: Matrix,
        query_modality: Modality,
        key_modality: Modality,
        query_labels: Vec<String>,
        key_labels: Vec<String>,
    ) -> Result<Self, FusionError> {
        if query_labels.len() != weights.rows() {
            return Err(FusionError::LabelCount {
                axis: "query",
                labels: query_labels.len(),
                size: weights.rows(),
            });
        }
        if key_labels.len() != weights.cols() {
            return Err(FusionError::LabelCount {
                axis: "key",
                labels: key_labels.len(),
                size: weights.cols(),
            });
        }
        for i in 0..weights.rows() {
            let mut sum = 0.0;
            for j in 0..weights.cols() {
                let v = weights[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(FusionError::EntryOutOfRange {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-5 {
                return Err(FusionError::RowNotStochastic { row: i, sum });
            }
        }
        Ok(AttentionMap {
            weights,
            query_modality,
            key_modality,
            query_labels,
            key_labels,
        })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn query_modality(&self) -> Modality {
        self.query_modality
    }

    pub fn key_modality(&self) -> Modality {
        self.key_modality
    }

    pub fn query_labels(&self) -> &[String] {
        &self.query_labels
    }

    pub fn key_labels(&self) -> &[String] {
        &self.key_labels
    }
}

/// Owning parameters of the co-attention block: six `d x d_k` projections.
/// Naming follows the output side: `sq`/`sk`/`sv` build the fused sequence
/// (queries from the sequence, keys and values from the structure),
/// `gq`/`gk`/`gv` the fused structure.
#[derive(Debug, Clone, PartialEq)]
pub struct CoAttentionParams {
    pub sq: crate::Param,
    pub sk: crate::Param,
    pub sv: crate::Param,
    pub gq: crate::Param,
    pub gk: crate::Param,
    pub gv: crate::Param,
}

impl CoAttentionParams {
    pub fn bind(&self, tape: &Tape) -> BoundCoAttention {
        BoundCoAttention {
            sq: self.sq.leaf(tape),
            sk: self.sk.leaf(tape),
            sv: self.sv.leaf(tape),
            gq: self.gq.leaf(tape),
            gk: self.gk.leaf(tape),
            gv: self.gv.leaf(tape),
        }
    }
}

/// The six projections of one co-attention block, bound to a tape.
pub struct BoundCoAttention {
    pub sq: Node,
    pub sk: Node,
    pub sv: Node,
    pub gq: Node,
    pub gk: Node,
    pub gv: Node,
}

/// Both fused feature sets plus the raw attention matrices.
pub struct CoAttendOutput {
    pub seq_fused: Node,
    pub struct_fused: Node,
    /// Rows: sequence positions (queries); columns: structure positions.
    pub seq_to_struct: Matrix,
    /// Rows: structure positions (queries); columns: sequence positions.
    pub struct_to_seq: Matrix,
}

fn check_projection(
    tape: &Tape,
    name: &'static str,
    node: Node,
    d: usize,
    dk: usize,
) -> Result<(), FusionError> {
    let shape = tape.value(node).shape();
    if shape != (d, dk) {
        return Err(FusionError::ProjectionShape {
            name,
            expected: (d, dk),
            found: shape,
        });
    }
    Ok(())
}

/// Bidirectional scaled dot-product attention between the two modality
/// feature sets (`n x d` each). Attention logits are scaled by
/// `1 / sqrt(d_k)` with `d_k` the projection width.
pub fn co_attend(
    tape: &Tape,
    seq: Node,
    structure: Node,
    params: &BoundCoAttention,
) -> Result<CoAttendOutput, FusionError> {
    let s_shape = tape.value(seq).shape();
    let g_shape = tape.value(structure).shape();
    if s_shape != g_shape {
        return Err(FusionError::InputShapes {
            left: s_shape,
            right: g_shape,
        });
    }
    let d = s_shape.1;
    let dk = tape.value(params.sq).cols();
    check_projection(tape, "sq", params.sq, d, dk)?;
    check_projection(tape, "sk", params.sk, d, dk)?;
    check_projection(tape, "sv", params.sv, d, dk)?;
    check_projection(tape, "gq", params.gq, d, dk)?;
    check_projection(tape, "gk", params.gk, d, dk)?;
    check_projection(tape, "gv", params.gv, d, dk)?;

    let inv_sqrt_dk = 1.0 / (dk as Real).sqrt();
    let attend = |q_in: Node, kv_in: Node, wq: Node, wk: Node, wv: Node| {
        let q = tape.matmul(q_in, wq)?;
        let k = tape.matmul(kv_in, wk)?;
        let v = tape.matmul(kv_in, wv)?;
        let logits = tape.scale(tape.matmul(q, tape.transpose(k))?, inv_sqrt_dk);
        let weights = tape.softmax_rows(logits);
        let fused = tape.matmul(weights, v)?;
        Ok::<(Node, Matrix), NumKitError>((fused, tape.value(weights)))
    };

    let (seq_fused, seq_to_struct) =
        attend(seq, structure, params.sq, params.sk, params.sv)?;
    let (struct_fused, struct_to_seq) =
        attend(structure, seq, params.gq, params.gk, params.gv)?;

    Ok(CoAttendOutput {
        seq_fused,
        struct_fused,
        seq_to_struct,
        struct_to_seq,
    })
}

/// Column means as a single row: `n x d` becomes `1 x d`.
pub fn pool(tape: &Tape, x: Node) -> Node {
    tape.transpose(tape.row_mean(tape.transpose(x)))
}

/// Linear head over the concatenated pooled features, squashed to a
/// probability: `sigmoid([z_seq || z_struct] w^T + b)`. `w` is
/// `1 x 2d`, `b` is `1 x 1`, and both pooled inputs are single rows.
pub fn classify(
    tape: &Tape,
    z_seq: Node,
    z_struct: Node,
    w: Node,
    b: Node,
) -> Result<Node, FusionError> {
    for z in [z_seq, z_struct] {
        let rows = tape.value(z).rows();
        if rows != 1 {
            return Err(FusionError::NotPooled { rows });
        }
    }
    let cat = tape.concat_cols(z_seq, z_struct)?;
    let logit = tape.add(tape.matmul(cat, tape.transpose(w))?, b)?;
    Ok(tape.sigmoid(logit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mt(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn pool_takes_column_means() {
        let tape = Tape::new();
        let x = tape.leaf(mt(2, 2, &[1.0, 3.0, 5.0, 7.0]));
        let z = pool(&tape, x);
        assert_eq!(tape.value(z), mt(1, 2, &[3.0, 5.0]));
    }

    #[test]
    fn classify_reduces_to_a_sigmoid_of_the_picked_weights() {
        let tape = Tape::new();
        let zs = tape.leaf(mt(1, 2, &[1.0, 0.0]));
        let zg = tape.leaf(mt(1, 2, &[0.0, 1.0]));
        let w = tape.leaf(mt(1, 4, &[0.7, -2.0, 3.0, -0.4]));
        let b = tape.leaf(mt(1, 1, &[0.1]));
        let p = classify(&tape, zs, zg, w, b).unwrap();
        // logit = w[0] * 1 + w[3] * 1 + b = 0.7 - 0.4 + 0.1
        let expect = 1.0 / (1.0 + (-0.4f64).exp());
        assert!((tape.scalar_value(p) - expect).abs() < 1e-12);
    }

    #[test]
    fn classify_rejects_unpooled_features() {
        let tape = Tape::new();
        let zs = tape.leaf(Matrix::zeros(2, 2));
        let zg = tape.leaf(Matrix::zeros(1, 2));
        let w = tape.leaf(Matrix::zeros(1, 4));
        let b = tape.leaf(Matrix::zeros(1, 1));
        assert!(matches!(
            classify(&tape, zs, zg, w, b),
            Err(FusionError::NotPooled { rows: 2 })
        ));
    }

    /// Rebuilds one attention direction with raw loops, straight from the
    /// defining equation.
    fn dense_attention(q_in: &Matrix, kv_in: &Matrix, wq: &Matrix, wk: &Matrix, wv: &Matrix) -> Matrix {
        let q = q_in.matmul(wq).unwrap();
        let k = kv_in.matmul(wk).unwrap();
        let v = kv_in.matmul(wv).unwrap();
        let n = q.rows();
        let dk = q.cols();
        let mut out = Matrix::zeros(n, dk);
        for i in 0..n {
            let mut logits: Vec<f64> = (0..n)
                .map(|j| {
                    (0..dk).map(|f| q[(i, f)] * k[(j, f)]).sum::<f64>() / (dk as f64).sqrt()
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                sum += *l;
            }
            for l in logits.iter_mut() {
                *l /= sum;
            }
            for f in 0..dk {
                out[(i, f)] = (0..n).map(|j| logits[j] * v[(j, f)]).sum();
            }
        }
        out
    }

    #[test]
    fn co_attend_matches_the_dense_equation() {
        let tape = Tape::new();
        let s = tape.leaf(mt(3, 2, &[0.5, -0.2, 1.1, 0.4, -0.7, 0.9]));
        let g = tape.leaf(mt(3, 2, &[0.1, 0.8, -0.3, 0.2, 0.6, -0.5]));
        let mk = |seed: f64| mt(2, 2, &[0.3 + seed, -0.1, 0.2, 0.4 - seed]);
        let params = BoundCoAttention {
            sq: tape.leaf(mk(0.0)),
            sk: tape.leaf(mk(0.1)),
            sv: tape.leaf(mk(0.2)),
            gq: tape.leaf(mk(0.3)),
            gk: tape.leaf(mk(0.4)),
            gv: tape.leaf(mk(0.5)),
        };
        let out = co_attend(&tape, s, g, &params).unwrap();

        let sm = tape.value(s);
        let gm = tape.value(g);
        let expect_s = dense_attention(&sm, &gm, &mk(0.0), &mk(0.1), &mk(0.2));
        let expect_g = dense_attention(&gm, &sm, &mk(0.3), &mk(0.4), &mk(0.5));
        let got_s = tape.value(out.seq_fused);
        let got_g = tape.value(out.struct_fused);
        for (a, b) in got_s.data().iter().zip(expect_s.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in got_g.data().iter().zip(expect_g.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // both attention matrices row-stochastic
        for m in [&out.seq_to_struct, &out.struct_to_seq] {
            for i in 0..m.rows() {
                let sum: f64 = m.row(i).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn co_attend_rejects_mismatched_inputs() {
        let tape = Tape::new();
        let s = tape.leaf(Matrix::zeros(3, 2));
        let g = tape.leaf(Matrix::zeros(4, 2));
        let p = BoundCoAttention {
            sq: tape.leaf(Matrix::zeros(2, 2)),
            sk: tape.leaf(Matrix::zeros(2, 2)),
            sv: tape.leaf(Matrix::zeros(2, 2)),
            gq: tape.leaf(Matrix::zeros(2, 2)),
            gk: tape.leaf(Matrix::zeros(2, 2)),
            gv: tape.leaf(Matrix::zeros(2, 2)),
        };
        assert!(matches!(
            co_attend(&tape, s, g, &p),
            Err(FusionError::InputShapes { .. })
        ));

        let g2 = tape.leaf(Matrix::zeros(3, 2));
        let bad = BoundCoAttention {
            sq: tape.leaf(Matrix::zeros(3, 2)),
            ..p
        };
        assert!(matches!(
            co_attend(&tape, s, g2, &bad),
            Err(FusionError::ProjectionShape { name: "sq", .. })
        ));
    }

    #[test]
    fn attention_map_enforces_row_stochasticity_and_labels() {
        let ok = AttentionMap::new(
            mt(2, 2, &[0.25, 0.75, 1.0, 0.0]),
            Modality::Sequence,
            Modality::Structure,
            vec!["K1".into(), "L2".into()],
            vec!["1".into(), "2".into()],
        );
        assert!(ok.is_ok());

        assert!(matches!(
            AttentionMap::new(
                mt(1, 2, &[0.7, 0.7]),
                Modality::Sequence,
                Modality::Structure,
                vec!["K1".into()],
                vec!["1".into(), "2".into()],
            ),
            Err(FusionError::RowNotStochastic { row: 0, .. })
        ));
        assert!(matches!(
            AttentionMap::new(
                mt(1, 2, &[-0.2, 1.2]),
                Modality::Sequence,
                Modality::Structure,
                vec!["K1".into()],
                vec!["1".into(), "2".into()],
            ),
            Err(FusionError::EntryOutOfRange { .. })
        ));
        assert!(matches!(
            AttentionMap::new(
                mt(1, 2, &[0.5, 0.5]),
                Modality::Sequence,
                Modality::Structure,
                vec![],
                vec!["1".into(), "2".into()],
            ),
            Err(FusionError::LabelCount { axis: "query", .. })
        ));
    }
}
