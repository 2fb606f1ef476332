//! Peptide classification from sequence and backbone geometry, small enough
//! to train on a laptop core.
//!
//! The crate is layered bottom-up: [`numkit`] provides dense matrices and a
//! reverse-mode tape, [`ioformats`] and [`contactgraph`] turn raw files into
//! residue graphs, [`encoders`] / [`fusion`] / [`losses`] assemble the model,
//! and [`trainer`] / [`explain`] drive it. Everything numeric is generic over
//! the scalar type; the aliases below pin the working precision used by the
//! model code (`f64` for compute, `f32` on disk).

pub mod contactgraph;
pub mod encoders;
pub mod explain;
pub mod fusion;
pub mod gradcheck;
pub mod ioformats;
pub mod losses;
pub mod model;
pub mod numkit;
pub mod scalar;
pub mod synth;
pub mod trainer;

/// Working precision for all in-memory model computation.
pub type Real = f64;

/// Dense matrix at working precision.
pub type Matrix = numkit::Matrix<Real>;

/// Reverse-mode tape at working precision.
pub type Tape = numkit::Tape<Real>;

/// Trainable value with paired gradient storage, at working precision.
pub type Param = numkit::Param<Real>;

/// Residue alphabet: the 20 canonical amino acids in alphabetical order of
/// their one-letter codes, plus 'X' for unknown residues at the last index.
pub const ALPHABET: &[u8; 21] = b"ACDEFGHIKLMNPQRSTVWYX";

/// Index of a residue letter in [`ALPHABET`], or `None` if it is not a
/// canonical code and not 'X'. Case-sensitive; callers normalize first.
pub fn residue_index(code: u8) -> Option<usize> {
    ALPHABET.iter().position(|&c| c == code)
}
