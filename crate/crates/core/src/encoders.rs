//! Sequence and structure encoders.
//!
//! The sequence side turns residues into feature rows, either from a
//! trainable lookup table with a fixed sinusoidal position signal or from a
//! frozen embedding cache. The structure side runs stacked graph-attention
//! layers over the residue contact graph; each layer scores every edge,
//! normalizes scores per neighborhood, and aggregates projected neighbor
//! features, with multi-head outputs concatenated.

use crate::contactgraph::ResidueGraph;
use crate::ioformats::{EmbeddingFile, Peptide};
use crate::numkit::{GatHeadCoeffs, Node, NumKitError};
use crate::{Matrix, Real, Tape};
use thiserror::Error;

pub use crate::numkit::Activation;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("no cached embedding for peptide {id:?}")]
    MissingCacheEntry { id: String },
    #[error("peptide {id:?} has {residues} residues but its cache entry has {rows} rows")]
    LengthMismatch {
        id: String,
        rows: usize,
        residues: usize,
    },
    #[error("graph covers {graph} residues, features cover {features}")]
    GraphSizeMismatch { graph: usize, features: usize },
    #[error(transparent)]
    Tape(#[from] NumKitError),
}

/// Where per-residue sequence features come from.
#[derive(Debug)]
pub enum Provider {
    /// Trainable 21-row lookup table plus sinusoidal positions.
    Table,
    /// Frozen rows from an embedding cache, optionally re-projected.
    File(EmbeddingFile),
}

impl Provider {
    pub fn cache_dim(&self) -> Option<usize> {
        match self {
            Provider::Table => None,
            Provider::File(f) => Some(f.dim()),
        }
    }
}

/// Classic sinusoidal position signal: row `i`, column `2k` holds
/// `sin(i / 10000^(2k/dim))` and column `2k+1` the matching cosine. Rows are
/// pairwise distinct, so two identical residues at different positions still
/// encode differently.
pub fn positional_encoding(n: usize, dim: usize) -> Matrix {
    assert!(n > 0 && dim > 0);
    Matrix::from_fn(n, dim, |i, j| {
        let k = (j / 2) as f64;
        let rate = 10_000f64.powf(2.0 * k / dim as f64);
        let angle = i as f64 / rate;
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Provider parameters already registered on a tape for one forward pass.
pub enum BoundProvider<'a> {
    Table { table: Node },
    File {
        cache: &'a EmbeddingFile,
        /// Present exactly when the cache dim differs from the model dim.
        projection: Option<Node>,
    },
}

/// Per-residue feature rows for one peptide: `len x dim`. Table mode gathers
/// residue rows (shared residues share gradient) and adds the position
/// signal; file mode loads the cached rows and projects them if needed.
pub fn seq_encode(
    tape: &Tape,
    peptide: &Peptide,
    provider: &BoundProvider,
) -> Result<Node, EncodeError> {
    match provider {
        BoundProvider::Table { table } => {
            let rows = tape.gather_rows(*table, peptide.residues());
            let dim = tape.value(*table).cols();
            let pos = tape.leaf(positional_encoding(peptide.len(), dim));
            Ok(tape.add(rows, pos)?)
        }
        BoundProvider::File { cache, projection } => {
            let entry = cache
                .get(peptide.id())
                .ok_or_else(|| EncodeError::MissingCacheEntry {
                    id: peptide.id().to_string(),
                })?;
            if entry.rows() != peptide.len() {
                return Err(EncodeError::LengthMismatch {
                    id: peptide.id().to_string(),
                    rows: entry.rows(),
                    residues: peptide.len(),
                });
            }
            let frozen = tape.leaf(entry.cast::<Real>());
            match projection {
                Some(p) => Ok(tape.matmul(frozen, *p)?),
                None => Ok(frozen),
            }
        }
    }
}

/// Owning parameters of one attention head: the feature projection `w`
/// (`head_dim x in_dim`) and the edge-scoring vector `a` (`2*head_dim x 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct GatHeadParams {
    pub w: crate::Param,
    pub a: crate::Param,
}

/// Owning parameters of one multi-head layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams {
    pub heads: Vec<GatHeadParams>,
}

impl GatLayerParams {
    /// Registers every head on the tape for one forward pass.
    pub fn bind(&self, tape: &Tape, activation: Activation, leaky_slope: Real) -> BoundGatLayer {
        BoundGatLayer {
            heads: self
                .heads
                .iter()
                .map(|h| (h.w.leaf(tape), h.a.leaf(tape)))
                .collect(),
            activation,
            leaky_slope,
        }
    }
}

/// One graph-attention layer bound to a tape: `(w, a)` nodes per head plus
/// the shared nonlinearities.
pub struct BoundGatLayer {
    pub heads: Vec<(Node, Node)>,
    pub activation: Activation,
    pub leaky_slope: Real,
}

/// Attention coefficients of one layer, one entry set per head. Each edge
/// carries its raw (rectified) score and its softmax-normalized weight.
#[derive(Debug, Clone)]
pub struct AttentionCoefficients {
    pub heads: Vec<GatHeadCoeffs<Real>>,
}

/// Applies one multi-head attention layer over the contact graph. Head
/// outputs are concatenated column-wise, so the result is
/// `n x (heads * head_dim)`.
pub fn gat_layer(
    tape: &Tape,
    features: Node,
    graph: &ResidueGraph,
    layer: &BoundGatLayer,
) -> Result<(Node, AttentionCoefficients), EncodeError> {
    let n = tape.value(features).rows();
    if n != graph.len() {
        return Err(EncodeError::GraphSizeMismatch {
            graph: graph.len(),
            features: n,
        });
    }
    assert!(!layer.heads.is_empty(), "a layer needs at least one head");
    let mut outputs = Vec::with_capacity(layer.heads.len());
    let mut coeffs = Vec::with_capacity(layer.heads.len());
    for &(w, a) in &layer.heads {
        let (out, c) = tape.gat_attention_head(
            features,
            w,
            a,
            graph.neighbor_lists(),
            layer.activation,
            layer.leaky_slope,
        )?;
        outputs.push(out);
        coeffs.push(c);
    }
    let mut combined = outputs[0];
    for &o in &outputs[1..] {
        combined = tape.concat_cols(combined, o)?;
    }
    Ok((combined, AttentionCoefficients { heads: coeffs }))
}

/// Runs the layer stack in sequence, returning the final features and the
/// attention coefficients of every layer.
pub fn gat_encode(
    tape: &Tape,
    features: Node,
    graph: &ResidueGraph,
    layers: &[BoundGatLayer],
) -> Result<(Node, Vec<AttentionCoefficients>), EncodeError> {
    assert!(!layers.is_empty(), "encoder needs at least one layer");
    let mut h = features;
    let mut all = Vec::with_capacity(layers.len());
    for layer in layers {
        let (next, coeffs) = gat_layer(tape, h, graph, layer)?;
        h = next;
        all.push(coeffs);
    }
    Ok((h, all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contactgraph::build_contact_graph;
    use crate::ioformats::CoordSet;

    fn m32(rows: usize, cols: usize, data: Vec<f32>) -> crate::numkit::Matrix<f32> {
        crate::numkit::Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn chain_graph(n: usize) -> ResidueGraph {
        let pts: Vec<[f64; 3]> = (0..n).map(|i| [3.8 * i as f64, 0.0, 0.0]).collect();
        build_contact_graph(&CoordSet::new("t", pts).unwrap(), 4.0).unwrap()
    }

    #[test]
    fn positional_rows_are_distinct_and_bounded() {
        let pe = positional_encoding(6, 8);
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    assert_ne!(pe.row(i), pe.row(j));
                }
            }
            assert!(pe.row(i).iter().all(|v| v.abs() <= 1.0));
        }
        // position 0 is sin(0)/cos(0) interleaved
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn table_rows_for_equal_residues_differ_only_by_position() {
        let tape = Tape::new();
        let table = tape.leaf(Matrix::from_fn(21, 4, |i, j| (i * 4 + j) as f64 * 0.01));
        let pep = Peptide::new("p", "AAKA", None).unwrap();
        let s = seq_encode(&tape, &pep, &BoundProvider::Table { table }).unwrap();
        let v = tape.value(s);
        let pe = positional_encoding(4, 4);
        // strip the position signal; residue rows 0, 1, 3 are all 'A'
        let strip = |i: usize| -> Vec<f64> {
            v.row(i)
                .iter()
                .zip(pe.row(i))
                .map(|(a, b)| a - b)
                .collect()
        };
        let close = |x: &[f64], y: &[f64]| {
            x.iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-12)
        };
        assert!(close(&strip(0), &strip(1)));
        assert!(close(&strip(0), &strip(3)));
        assert!(!close(&strip(0), &strip(2)));
        assert_ne!(v.row(0), v.row(1));
    }

    #[test]
    fn table_gradient_accumulates_over_shared_residues() {
        let tape = Tape::new();
        let table = tape.leaf(Matrix::zeros(21, 3));
        let pep = Peptide::new("p", "GG", None).unwrap();
        let s = seq_encode(&tape, &pep, &BoundProvider::Table { table }).unwrap();
        let loss = tape.sum_all(s);
        tape.backward(loss).unwrap();
        let g = tape.grad(table);
        let gly = crate::residue_index(b'G').unwrap();
        assert_eq!(g.row(gly), &[2.0, 2.0, 2.0]);
        let lys = crate::residue_index(b'K').unwrap();
        assert_eq!(g.row(lys), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn file_provider_passthrough_and_projection() {
        let mut cache = EmbeddingFile::new(3).unwrap();
        cache
            .push("p", m32(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]))
            .unwrap();
        let pep = Peptide::new("p", "KL", None).unwrap();

        let tape = Tape::new();
        let s = seq_encode(
            &tape,
            &pep,
            &BoundProvider::File {
                cache: &cache,
                projection: None,
            },
        )
        .unwrap();
        assert_eq!(
            tape.value(s),
            Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()
        );

        let proj = tape.leaf(Matrix::from_fn(3, 5, |i, j| ((i + j) % 3) as f64));
        let wide = seq_encode(
            &tape,
            &pep,
            &BoundProvider::File {
                cache: &cache,
                projection: Some(proj),
            },
        )
        .unwrap();
        assert_eq!(tape.value(wide).shape(), (2, 5));
    }

    #[test]
    fn file_provider_rejects_missing_and_mismatched_entries() {
        let mut cache = EmbeddingFile::new(3).unwrap();
        cache
            .push("other", m32(2, 3, vec![0.0; 6]))
            .unwrap();
        let pep = Peptide::new("p", "KL", None).unwrap();
        let tape = Tape::new();
        let err = seq_encode(
            &tape,
            &pep,
            &BoundProvider::File {
                cache: &cache,
                projection: None,
            },
        )
        .unwrap_err();
        assert!(matches!(err, EncodeError::MissingCacheEntry { .. }));

        let mut short = EmbeddingFile::new(3).unwrap();
        short
            .push("p", m32(5, 3, vec![0.0; 15]))
            .unwrap();
        let err = seq_encode(
            &tape,
            &pep,
            &BoundProvider::File {
                cache: &short,
                projection: None,
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            EncodeError::LengthMismatch { rows: 5, residues: 2, .. }
        ));
    }

    #[test]
    fn multi_head_layer_concatenates_and_normalizes() {
        let tape = Tape::new();
        let graph = chain_graph(4);
        let h = tape.leaf(Matrix::from_fn(4, 3, |i, j| 0.3 * i as f64 - 0.2 * j as f64));
        let heads = (0..2)
            .map(|k| {
                let w = tape.leaf(Matrix::from_fn(2, 3, |i, j| {
                    0.1 * (i + j + k) as f64 + 0.05
                }));
                let a = tape.leaf(Matrix::from_fn(4, 1, |i, _| 0.2 * (i + 1) as f64 - 0.3));
                (w, a)
            })
            .collect();
        let layer = BoundGatLayer {
            heads,
            activation: Activation::Gelu,
            leaky_slope: 0.2,
        };
        let (out, coeffs) = gat_layer(&tape, h, &graph, &layer).unwrap();
        assert_eq!(tape.value(out).shape(), (4, 4)); // 2 heads x dh 2
        assert_eq!(coeffs.heads.len(), 2);
        for head in &coeffs.heads {
            for (i, entries) in head.entries.iter().enumerate() {
                assert_eq!(
                    entries.iter().map(|&(j, _, _)| j).collect::<Vec<_>>(),
                    graph.neighbors_of(i)
                );
                let sum: f64 = entries.iter().map(|&(_, _, al)| al).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_layer_output_is_local_to_the_neighborhood() {
        // node 0 of a 4-chain sees nodes {0, 1}; perturbing node 3 must not
        // change row 0 after one layer
        let graph = chain_graph(4);
        let base = Matrix::from_fn(4, 3, |i, j| 0.4 * i as f64 + 0.1 * j as f64);
        let mut moved = base.clone();
        moved[(3, 1)] = 9.0;

        let run = |features: &Matrix| -> Vec<f64> {
            let tape = Tape::new();
            let h = tape.leaf(features.clone());
            let w = tape.leaf(Matrix::from_fn(3, 3, |i, j| 0.1 * (i as f64) - 0.2 * (j as f64) + 0.15));
            let a = tape.leaf(Matrix::from_fn(6, 1, |i, _| 0.1 * (i as f64) - 0.25));
            let layer = BoundGatLayer {
                heads: vec![(w, a)],
                activation: Activation::Gelu,
                leaky_slope: 0.2,
            };
            let (out, _) = gat_layer(&tape, h, &graph, &layer).unwrap();
            tape.value(out).row(0).to_vec()
        };
        assert_eq!(run(&base), run(&moved));
    }

    #[test]
    fn layer_rejects_graph_feature_size_mismatch() {
        let tape = Tape::new();
        let graph = chain_graph(3);
        let h = tape.leaf(Matrix::zeros(4, 3));
        let w = tape.leaf(Matrix::zeros(2, 3));
        let a = tape.leaf(Matrix::zeros(4, 1));
        let layer = BoundGatLayer {
            heads: vec![(w, a)],
            activation: Activation::Relu,
            leaky_slope: 0.2,
        };
        assert!(matches!(
            gat_layer(&tape, h, &graph, &layer),
            Err(EncodeError::GraphSizeMismatch { graph: 3, features: 4 })
        ));
    }
}
