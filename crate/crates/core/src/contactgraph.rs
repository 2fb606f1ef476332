//! Residue contact graphs from alpha-carbon geometry.
//!
//! Two residues are connected when their alpha carbons sit within a distance
//! threshold. Chain neighbors (i, i+1) are always connected regardless of
//! distance, and every node carries a self-loop, so no neighborhood is ever
//! empty and attention over it is always well defined.

use crate::ioformats::CoordSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphBuildError {
    #[error("contact threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("coordinate {index} is not finite")]
    NonFiniteCoordinate { index: usize },
    #[error("neighbor list {index} must be sorted, in range, and contain {index} itself")]
    MalformedNeighborList { index: usize },
    #[error("adjacency is not symmetric at ({i}, {j})")]
    AsymmetricEdge { i: usize, j: usize },
}

/// Undirected contact graph over the residues of one peptide. Adjacency is
/// stored as sorted neighbor lists that include the node itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidueGraph {
    neighbors: Vec<Vec<usize>>,
    threshold: f64,
}

impl ResidueGraph {
    /// Builds a graph directly from adjacency lists, for synthetic graphs or
    /// adjacency computed elsewhere. Every list must be sorted, stay in
    /// range, and include its own index; the relation must be symmetric.
    pub fn from_neighbor_lists(
        neighbors: Vec<Vec<usize>>,
        threshold: f64,
    ) -> Result<Self, GraphBuildError> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(GraphBuildError::InvalidThreshold(threshold));
        }
        let n = neighbors.len();
        for (index, list) in neighbors.iter().enumerate() {
            let sorted = list.windows(2).all(|w| w[0] < w[1]);
            let in_range = list.iter().all(|&j| j < n);
            if !sorted || !in_range || list.binary_search(&index).is_err() {
                return Err(GraphBuildError::MalformedNeighborList { index });
            }
        }
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                if neighbors[j].binary_search(&i).is_err() {
                    return Err(GraphBuildError::AsymmetricEdge { i, j });
                }
            }
        }
        Ok(ResidueGraph {
            neighbors,
            threshold,
        })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Sorted neighbors of `i`, always containing `i`.
    pub fn neighbors_of(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn neighbor_lists(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Number of undirected edges, self-loops not counted.
    pub fn edge_count(&self) -> usize {
        let directed: usize = self
            .neighbors
            .iter()
            .enumerate()
            .map(|(i, l)| l.iter().filter(|&&j| j != i).count())
            .sum();
        directed / 2
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }
}

/// Builds the contact graph of `coords` at `threshold` (in the same length
/// unit as the coordinates; angstroms for PDB input). Edges: alpha-carbon
/// pairs at distance <= threshold, plus every chain bond (i, i+1), plus a
/// self-loop per residue. Symmetric by construction.
pub fn build_contact_graph(
    coords: &CoordSet,
    threshold: f64,
) -> Result<ResidueGraph, GraphBuildError> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(GraphBuildError::InvalidThreshold(threshold));
    }
    let pts = coords.coords();
    for (index, p) in pts.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(GraphBuildError::NonFiniteCoordinate { index });
        }
    }
    let n = pts.len();
    let t2 = threshold * threshold;
    let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = (0..3).map(|k| (pts[i][k] - pts[j][k]).powi(2)).sum();
            if d2 <= t2 || j == i + 1 {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    Ok(ResidueGraph {
        neighbors,
        threshold,
    })
}
