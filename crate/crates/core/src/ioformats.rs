//! Parsers and writers for every on-disk format: FASTA sequences, PDB
//! alpha-carbon traces, the labeled dataset CSV, and the PTRIXEMB embedding
//! cache. Parsing is total: malformed input comes back as a typed
//! [`FormatError`] with enough position information to fix the file.

use crate::numkit::Matrix;
use crate::{residue_index, ALPHABET};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("input is not valid UTF-8")]
    NotUtf8,
    #[error("line {line}: illegal residue {ch:?}")]
    IllegalResidue { ch: char, line: usize },
    #[error("peptide {id:?}: illegal residue {ch:?} at position {pos}")]
    IllegalResidueAt { id: String, ch: char, pos: usize },
    #[error("peptide {id:?}: sequence length {len} outside 2..=512")]
    SequenceLength { id: String, len: usize },
    #[error("line {line}: record {id:?} has an empty sequence")]
    EmptyRecord { id: String, line: usize },
    #[error("line {line}: header has an empty id")]
    EmptyId { line: usize },
    #[error("line {line}: sequence data before the first '>' header")]
    StrayData { line: usize },
    #[error("duplicate id {id:?}")]
    DuplicateId { id: String },
    #[error("csv header must be exactly id,sequence,label; found {found:?}")]
    CsvHeader { found: String },
    #[error("line {line}: label must be 0 or 1, found {value:?}")]
    CsvLabel { value: String, line: usize },
    #[error("csv: {0}")]
    CsvShape(String),
    #[error("dataset has a header but no rows")]
    EmptyDataset,
    #[error("{id:?}: no alpha-carbon ATOM records found")]
    NoCaAtoms { id: String },
    #[error("{id:?}: only {n} alpha-carbon record(s); at least 2 residues required")]
    TooFewCa { id: String, n: usize },
    #[error("{id:?}: ATOM record {record}: unparseable coordinate columns")]
    BadCoordinate { id: String, record: usize },
    #[error("{id:?}: ATOM record {record}: residue numbering is not strictly increasing")]
    NonMonotonicResidues { id: String, record: usize },
    #[error("bad magic {found:?}; not a {expected} file")]
    BadMagic { expected: &'static str, found: Vec<u8> },
    #[error("unsupported {what} version {found} (this build reads version {supported})")]
    UnsupportedVersion {
        what: &'static str,
        found: u32,
        supported: u32,
    },
    #[error("file truncated while reading {at}")]
    Truncated { at: &'static str },
    #[error("{extra} trailing byte(s) after the final entry")]
    TrailingBytes { extra: usize },
    #[error("embedding dim must be positive")]
    ZeroDim,
    #[error("entry {id:?} has {found} columns, cache dim is {expected}")]
    DimMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
}

// ---------------------------------------------------------------------------
// peptides

/// A validated peptide: 2..=512 residues over the 20 canonical amino acids
/// plus 'X', with an optional binary activity label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Peptide {
    id: String,
    residues: Vec<usize>,
    label: Option<u8>,
}

impl Peptide {
    /// Validates and normalizes a sequence (lowercase input is accepted).
    pub fn new(id: &str, sequence: &str, label: Option<u8>) -> Result<Self, FormatError> {
        let mut residues = Vec::with_capacity(sequence.len());
        for (pos, ch) in sequence.chars().enumerate() {
            let up = ch.to_ascii_uppercase();
            match up.try_into().ok().and_then(residue_index) {
                Some(idx) => residues.push(idx),
                None => {
                    return Err(FormatError::IllegalResidueAt {
                        id: id.to_string(),
                        ch,
                        pos: pos + 1,
                    })
                }
            }
        }
        if !(2..=512).contains(&residues.len()) {
            return Err(FormatError::SequenceLength {
                id: id.to_string(),
                len: residues.len(),
            });
        }
        Ok(Peptide {
            id: id.to_string(),
            residues,
            label,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        false // length is always >= 2
    }

    /// Alphabet indices, one per residue, each in 0..=20.
    pub fn residues(&self) -> &[usize] {
        &self.residues
    }

    pub fn label(&self) -> Option<u8> {
        self.label
    }

    pub fn set_label(&mut self, label: Option<u8>) {
        self.label = label;
    }

    pub fn sequence(&self) -> String {
        self.residues
            .iter()
            .map(|&i| ALPHABET[i] as char)
            .collect()
    }

    pub fn residue_letter(&self, i: usize) -> char {
        ALPHABET[self.residues[i]] as char
    }

    /// Display label for residue `i`, e.g. "K1" for an N-terminal lysine.
    pub fn residue_tag(&self, i: usize) -> String {
        format!("{}{}", self.residue_letter(i), i + 1)
    }
}

// ---------------------------------------------------------------------------
// FASTA

/// Parses FASTA text. Sequence lines fold together until the next header,
/// lowercase residues are normalized to uppercase, and ids (the header token
/// up to the first whitespace) must be unique. Records carry no labels.
pub fn parse_fasta(text: &str) -> Result<Vec<Peptide>, FormatError> {
    struct Open {
        id: String,
        header_line: usize,
        residues: Vec<usize>,
    }

    let mut out: Vec<Peptide> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut open: Option<Open> = None;

    let mut close = |open: &mut Option<Open>| -> Result<(), FormatError> {
        if let Some(rec) = open.take() {
            if rec.residues.is_empty() {
                return Err(FormatError::EmptyRecord {
                    id: rec.id,
                    line: rec.header_line,
                });
            }
            if !(2..=512).contains(&rec.residues.len()) {
                return Err(FormatError::SequenceLength {
                    id: rec.id,
                    len: rec.residues.len(),
                });
            }
            out.push(Peptide {
                id: rec.id,
                residues: rec.residues,
                label: None,
            });
        }
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if let Some(header) = line.strip_prefix('>') {
            close(&mut open)?;
            let id = header
                .split_whitespace()
                .next()
                .unwrap_or("")
                .to_string();
            if id.is_empty() {
                return Err(FormatError::EmptyId { line: line_no });
            }
            if !seen.insert(id.clone()) {
                return Err(FormatError::DuplicateId { id });
            }
            open = Some(Open {
                id,
                header_line: line_no,
                residues: Vec::new(),
            });
            continue;
        }
        let body = line.trim();
        if body.is_empty() {
            continue;
        }
        let rec = match open.as_mut() {
            Some(rec) => rec,
            None => return Err(FormatError::StrayData { line: line_no }),
        };
        for ch in body.chars() {
            let up = ch.to_ascii_uppercase();
            match up.try_into().ok().and_then(residue_index) {
                Some(i) => rec.residues.push(i),
                None => return Err(FormatError::IllegalResidue { ch, line: line_no }),
            }
        }
    }
    close(&mut open)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// dataset CSV

/// Parses the labeled dataset: header `id,sequence,label`, one peptide per
/// row, labels strictly 0 or 1, unique ids, at least one row.
pub fn parse_dataset_csv(text: &str) -> Result<Vec<Peptide>, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());

    {
        let headers = reader
            .headers()
            .map_err(|e| FormatError::CsvShape(e.to_string()))?;
        let found: Vec<&str> = headers.iter().collect();
        if found != ["id", "sequence", "label"] {
            return Err(FormatError::CsvHeader {
                found: found.join(","),
            });
        }
    }

    let mut out = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| FormatError::CsvShape(e.to_string()))?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(0);
        if record.len() != 3 {
            return Err(FormatError::CsvShape(format!(
                "line {line}: expected 3 fields, found {}",
                record.len()
            )));
        }
        let id = record.get(0).unwrap_or("");
        let sequence = record.get(1).unwrap_or("");
        let label_text = record.get(2).unwrap_or("");
        if id.is_empty() {
            return Err(FormatError::EmptyId { line });
        }
        if !seen.insert(id.to_string()) {
            return Err(FormatError::DuplicateId { id: id.to_string() });
        }
        let label = match label_text {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(FormatError::CsvLabel {
                    value: other.to_string(),
                    line,
                })
            }
        };
        let peptide = Peptide::new(id, sequence, Some(label)).map_err(|e| match e {
            // re-attribute sequence problems to the csv line
            FormatError::IllegalResidueAt { ch, .. } => {
                FormatError::IllegalResidue { ch, line }
            }
            other => other,
        })?;
        out.push(peptide);
    }
    if out.is_empty() {
        return Err(FormatError::EmptyDataset);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// PDB alpha-carbon traces

/// Alpha-carbon coordinates of one peptide, in residue order. Always holds
/// at least two finite points.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordSet {
    id: String,
    coords: Vec<[f64; 3]>,
}

impl CoordSet {
    pub fn new(id: &str, coords: Vec<[f64; 3]>) -> Result<Self, FormatError> {
        if coords.len() < 2 {
            return Err(FormatError::TooFewCa {
                id: id.to_string(),
                n: coords.len(),
            });
        }
        for (i, c) in coords.iter().enumerate() {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(FormatError::BadCoordinate {
                    id: id.to_string(),
                    record: i + 1,
                });
            }
        }
        Ok(CoordSet {
            id: id.to_string(),
            coords,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        false // length is always >= 2
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }
}

/// Extracts the alpha-carbon trace from PDB text. Keeps `ATOM` records with
/// atom name `CA` and altLoc blank or 'A'; everything else (other atoms,
/// HETATM, remarks) is ignored. Residue numbers of kept records must be
/// strictly increasing. Coordinates come from the fixed columns 31..54.
pub fn parse_pdb_ca(id: &str, text: &str) -> Result<CoordSet, FormatError> {
    let mut coords: Vec<[f64; 3]> = Vec::new();
    let mut last_resseq: Option<i64> = None;
    let mut atom_record = 0usize;

    for raw in text.lines() {
        let line = raw.trim_end_matches('\r');
        if line.get(..6) != Some("ATOM  ") {
            continue;
        }
        atom_record += 1;
        let name = line.get(12..16).unwrap_or("").trim();
        if name != "CA" {
            continue;
        }
        let alt_loc = line.as_bytes().get(16).copied().unwrap_or(b' ');
        if alt_loc != b' ' && alt_loc != b'A' {
            continue;
        }
        let resseq: i64 = line
            .get(22..26)
            .map(str::trim)
            .and_then(|s| s.parse().ok())
            .ok_or(FormatError::BadCoordinate {
                id: id.to_string(),
                record: atom_record,
            })?;
        if let Some(prev) = last_resseq {
            if resseq <= prev {
                return Err(FormatError::NonMonotonicResidues {
                    id: id.to_string(),
                    record: atom_record,
                });
            }
        }
        last_resseq = Some(resseq);

        let mut xyz = [0.0f64; 3];
        for (k, span) in [(0, 30..38), (1, 38..46), (2, 46..54)] {
            let v: f64 = line
                .get(span)
                .map(str::trim)
                .and_then(|s| s.parse().ok())
                .filter(|v: &f64| v.is_finite())
                .ok_or(FormatError::BadCoordinate {
                    id: id.to_string(),
                    record: atom_record,
                })?;
            xyz[k] = v;
        }
        coords.push(xyz);
    }

    if coords.is_empty() {
        return Err(FormatError::NoCaAtoms { id: id.to_string() });
    }
    CoordSet::new(id, coords)
}

/// Three-letter residue names for PDB output; 'X' maps to UNK.
const RESIDUE_NAMES: [&str; 21] = [
    "ALA", "CYS", "ASP", "GLU", "PHE", "GLY", "HIS", "ILE", "LYS", "LEU", "MET", "ASN", "PRO",
    "GLN", "ARG", "SER", "THR", "VAL", "TRP", "TYR", "UNK",
];

/// Renders a minimal single-chain PDB holding one CA record per residue, in
/// the fixed-width layout [`parse_pdb_ca`] reads back. Coordinates are
/// written with three decimals, the PDB column precision.
pub fn format_ca_pdb(peptide: &Peptide, coords: &CoordSet) -> String {
    assert_eq!(
        peptide.len(),
        coords.len(),
        "sequence and coordinates must pair one-to-one"
    );
    let mut out = String::new();
    for (i, c) in coords.coords().iter().enumerate() {
        let res = RESIDUE_NAMES[peptide.residues()[i]];
        let _ = writeln!(
            out,
            "ATOM  {serial:>5}  CA  {res} A{resseq:>4}    {x:>8.3}{y:>8.3}{z:>8.3}  1.00  0.00           C",
            serial = i + 1,
            res = res,
            resseq = i + 1,
            x = c[0],
            y = c[1],
            z = c[2],
        );
    }
    out.push_str("TER\nEND\n");
    out
}

// ---------------------------------------------------------------------------
// little-endian byte plumbing shared by PTRIXEMB and the model snapshot

pub(crate) mod bytes {
    use super::FormatError;

    pub fn put_u32(buf: &mut Vec<u8>, v: u32) {
        buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f32(buf: &mut Vec<u8>, v: f32) {
        buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64(buf: &mut Vec<u8>, v: f64) {
        buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_str(buf: &mut Vec<u8>, s: &str) {
        put_u32(buf, u32::try_from(s.len()).expect("name fits u32"));
        buf.extend_from_slice(s.as_bytes());
    }

    pub struct Reader<'a> {
        data: &'a [u8],
        at: usize,
    }

    impl<'a> Reader<'a> {
        pub fn new(data: &'a [u8]) -> Self {
            Reader { data, at: 0 }
        }

        pub fn remaining(&self) -> usize {
            self.data.len() - self.at
        }

        pub fn take(&mut self, n: usize, at: &'static str) -> Result<&'a [u8], FormatError> {
            if self.remaining() < n {
                return Err(FormatError::Truncated { at });
            }
            let slice = &self.data[self.at..self.at + n];
            self.at += n;
            Ok(slice)
        }

        pub fn u32(&mut self, at: &'static str) -> Result<u32, FormatError> {
            let b = self.take(4, at)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        }

        pub fn f32(&mut self, at: &'static str) -> Result<f32, FormatError> {
            let b = self.take(4, at)?;
            Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        }

        pub fn f64(&mut self, at: &'static str) -> Result<f64, FormatError> {
            let b = self.take(8, at)?;
            Ok(f64::from_le_bytes([
                b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
            ]))
        }

        pub fn string(&mut self, at: &'static str) -> Result<String, FormatError> {
            let len = self.u32(at)? as usize;
            let raw = self.take(len, at)?;
            String::from_utf8(raw.to_vec()).map_err(|_| FormatError::NotUtf8)
        }
    }
}

// ---------------------------------------------------------------------------
// PTRIXEMB embedding cache

const EMB_MAGIC: &[u8; 8] = b"PTRIXEMB";
const EMB_VERSION: u32 = 1;

/// Per-residue embedding rows for a set of peptides, serialized as
/// little-endian f32. Entry order is preserved, so a file read and written
/// back is bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    dim: usize,
    entries: Vec<(String, Matrix<f32>)>,
}

impl EmbeddingFile {
    pub fn new(dim: usize) -> Result<Self, FormatError> {
        if dim == 0 {
            return Err(FormatError::ZeroDim);
        }
        Ok(EmbeddingFile {
            dim,
            entries: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, id: &str, rows: Matrix<f32>) -> Result<(), FormatError> {
        if rows.cols() != self.dim {
            return Err(FormatError::DimMismatch {
                id: id.to_string(),
                expected: self.dim,
                found: rows.cols(),
            });
        }
        if self.get(id).is_some() {
            return Err(FormatError::DuplicateId { id: id.to_string() });
        }
        self.entries.push((id.to_string(), rows));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Matrix<f32>> {
        self.entries
            .iter()
            .find(|(eid, _)| eid == id)
            .map(|(_, m)| m)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<f32>)> {
        self.entries.iter().map(|(id, m)| (id.as_str(), m))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(EMB_MAGIC);
        bytes::put_u32(&mut buf, EMB_VERSION);
        bytes::put_u32(&mut buf, u32::try_from(self.dim).expect("dim fits u32"));
        bytes::put_u32(&mut buf, u32::try_from(self.entries.len()).expect("count fits u32"));
        for (id, rows) in &self.entries {
            bytes::put_str(&mut buf, id);
            bytes::put_u32(&mut buf, u32::try_from(rows.rows()).expect("rows fit u32"));
            for &v in rows.data() {
                bytes::put_f32(&mut buf, v);
            }
        }
        buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, FormatError> {
        let mut r = bytes::Reader::new(data);
        let magic = r.take(8, "magic")?;
        if magic != EMB_MAGIC {
            return Err(FormatError::BadMagic {
                expected: "PTRIXEMB",
                found: magic.to_vec(),
            });
        }
        let version = r.u32("version")?;
        if version != EMB_VERSION {
            return Err(FormatError::UnsupportedVersion {
                what: "embedding cache",
                found: version,
                supported: EMB_VERSION,
            });
        }
        let dim = r.u32("dim")? as usize;
        let count = r.u32("entry count")? as usize;
        let mut file = EmbeddingFile::new(dim)?;
        for _ in 0..count {
            let id = r.string("entry id")?;
            let rows = r.u32("entry row count")? as usize;
            let mut data = Vec::with_capacity(rows * dim);
            for _ in 0..rows * dim {
                data.push(r.f32("embedding payload")?);
            }
            let m = Matrix::from_vec(rows, dim, data).map_err(|_| FormatError::Truncated {
                at: "embedding payload",
            })?;
            file.push(&id, m)?;
        }
        if r.remaining() != 0 {
            return Err(FormatError::TrailingBytes {
                extra: r.remaining(),
            });
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peptide_normalizes_case_and_validates() {
        let p = Peptide::new("p", "acdK", Some(1)).unwrap();
        assert_eq!(p.sequence(), "ACDK");
        assert_eq!(p.residues(), &[0, 1, 2, 8]);
        assert_eq!(p.residue_tag(3), "K4");
        assert!(matches!(
            Peptide::new("p", "A", None),
            Err(FormatError::SequenceLength { len: 1, .. })
        ));
        assert!(matches!(
            Peptide::new("p", "AB", None),
            Err(FormatError::IllegalResidueAt { ch: 'B', pos: 2, .. })
        ));
        let long = "A".repeat(513);
        assert!(matches!(
            Peptide::new("p", &long, None),
            Err(FormatError::SequenceLength { len: 513, .. })
        ));
        assert!(Peptide::new("p", &"A".repeat(512), None).is_ok());
    }

    #[test]
    fn fasta_folds_lines_and_normalizes() {
        let peps = parse_fasta(">p1 some description\nACDE\nfghk\n\n>p2\nKKLL\n").unwrap();
        assert_eq!(peps.len(), 2);
        assert_eq!(peps[0].id(), "p1");
        assert_eq!(peps[0].sequence(), "ACDEFGHK");
        assert_eq!(peps[1].sequence(), "KKLL");
        assert_eq!(peps[0].label(), None);
    }

    #[test]
    fn fasta_reports_first_illegal_residue_with_line() {
        // both 'Z' and '9' are outside the alphabet; the scan hits 'Z' first
        let err = parse_fasta(">p1\nACZ9\n").unwrap_err();
        assert!(matches!(
            err,
            FormatError::IllegalResidue { ch: 'Z', line: 2 }
        ));
        let err = parse_fasta(">p1\nAC\nD9\n").unwrap_err();
        assert!(matches!(
            err,
            FormatError::IllegalResidue { ch: '9', line: 3 }
        ));
    }

    #[test]
    fn fasta_rejects_structureless_input() {
        assert!(matches!(
            parse_fasta(">p1\n>p2\nACDK\n"),
            Err(FormatError::EmptyRecord { line: 1, .. })
        ));
        assert!(matches!(
            parse_fasta("ACDK\n"),
            Err(FormatError::StrayData { line: 1 })
        ));
        assert!(matches!(
            parse_fasta(">\nACDK\n"),
            Err(FormatError::EmptyId { line: 1 })
        ));
        assert!(matches!(
            parse_fasta(">p1\nAC\n>p1\nGG\n"),
            Err(FormatError::DuplicateId { .. })
        ));
        assert_eq!(parse_fasta("").unwrap().len(), 0);
    }

    #[test]
    fn dataset_csv_happy_path() {
        let peps = parse_dataset_csv("id,sequence,label\na,ACDK,1\nb,GGGG,0\n").unwrap();
        assert_eq!(peps.len(), 2);
        assert_eq!(peps[0].label(), Some(1));
        assert_eq!(peps[1].label(), Some(0));
    }

    #[test]
    fn dataset_csv_rejects_malformed_input() {
        assert!(matches!(
            parse_dataset_csv("id,seq,label\na,ACDK,1\n"),
            Err(FormatError::CsvHeader { .. })
        ));
        assert!(matches!(
            parse_dataset_csv("id,sequence,label\na,ACDK,2\n"),
            Err(FormatError::CsvLabel { line: 2, .. })
        ));
        assert!(matches!(
            parse_dataset_csv("id,sequence,label\na,AC9K,1\n"),
            Err(FormatError::IllegalResidue { ch: '9', line: 2 })
        ));
        assert!(matches!(
            parse_dataset_csv("id,sequence,label\na,ACDK,1\na,GGGG,0\n"),
            Err(FormatError::DuplicateId { .. })
        ));
        assert!(matches!(
            parse_dataset_csv("id,sequence,label\n"),
            Err(FormatError::EmptyDataset)
        ));
    }

    const PDB_SAMPLE: &str = "\
REMARK synthetic two-residue chain
ATOM      1  N   ALA A   1      10.000   5.000  -6.000  1.00  0.00           N
ATOM      2  CA  ALA A   1      11.639   6.071  -5.147  1.00  0.00           C
ATOM      3  CB  ALA A   1      12.000   7.000  -6.300  1.00  0.00           C
ATOM      4  CA BLYS A   2      99.000  99.000  99.000  1.00  0.00           C
ATOM      5  CA ALYS A   2      12.500   9.200  -4.000  1.00  0.00           C
HETATM  501  CA  CA  A 900       0.000   0.000   0.000  1.00  0.00          CA
TER
END
";

    #[test]
    fn pdb_keeps_primary_alpha_carbons_only() {
        let cs = parse_pdb_ca("p", PDB_SAMPLE).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs.coords()[0], [11.639, 6.071, -5.147]);
        assert_eq!(cs.coords()[1], [12.5, 9.2, -4.0]);
    }

    #[test]
    fn pdb_rejects_mangled_and_misordered_records() {
        let mangled = "ATOM      1  CA  ALA A   1      11.639   6.0x1  -5.147  1.00  0.00\nATOM      2  CA  ALA A   2      11.639   6.071  -5.147  1.00  0.00\n";
        assert!(matches!(
            parse_pdb_ca("p", mangled),
            Err(FormatError::BadCoordinate { record: 1, .. })
        ));
        let backwards = "ATOM      1  CA  ALA A   2      11.639   6.071  -5.147  1.00  0.00\nATOM      2  CA  ALA A   1      11.639   6.071  -5.147  1.00  0.00\n";
        assert!(matches!(
            parse_pdb_ca("p", backwards),
            Err(FormatError::NonMonotonicResidues { record: 2, .. })
        ));
        let truncated = "ATOM      1  CA  ALA A   1      11.639\n";
        assert!(matches!(
            parse_pdb_ca("p", truncated),
            Err(FormatError::BadCoordinate { record: 1, .. })
        ));
        assert!(matches!(
            parse_pdb_ca("p", "REMARK nothing here\n"),
            Err(FormatError::NoCaAtoms { .. })
        ));
        let single = "ATOM      1  CA  ALA A   1      11.639   6.071  -5.147  1.00  0.00\n";
        assert!(matches!(
            parse_pdb_ca("p", single),
            Err(FormatError::TooFewCa { n: 1, .. })
        ));
    }

    #[test]
    fn pdb_round_trips_through_the_writer() {
        let pep = Peptide::new("rt", "KLAKW", None).unwrap();
        let coords = CoordSet::new(
            "rt",
            vec![
                [0.0, 0.0, 0.0],
                [3.8, 0.0, 0.0],
                [7.6, 0.125, -2.5],
                [11.4, -0.25, 1.0],
                [15.2, 0.5, 0.5],
            ],
        )
        .unwrap();
        let text = format_ca_pdb(&pep, &coords);
        let parsed = parse_pdb_ca("rt", &text).unwrap();
        assert_eq!(parsed, coords);
        assert!(text.contains(" CA  LYS A"));
        assert!(text.contains(" CA  TRP A"));
    }

    fn sample_cache() -> EmbeddingFile {
        let mut f = EmbeddingFile::new(3).unwrap();
        f.push(
            "a",
            Matrix::from_vec(2, 3, vec![0.5f32, -1.25, 3.75, 0.0, 2.5, -0.125]).unwrap(),
        )
        .unwrap();
        f.push("b", Matrix::from_vec(1, 3, vec![9.0f32, -0.5, 0.25]).unwrap())
            .unwrap();
        f
    }

    #[test]
    fn embedding_cache_round_trips_bit_identically() {
        let f = sample_cache();
        let bytes = f.to_bytes();
        let back = EmbeddingFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(&bytes[..8], b"PTRIXEMB");
    }

    #[test]
    fn embedding_cache_rejects_corruption() {
        let f = sample_cache();
        let mut bytes = f.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            EmbeddingFile::from_bytes(&bytes),
            Err(FormatError::BadMagic { .. })
        ));

        let bytes = f.to_bytes();
        for cut in [4, 10, 16, bytes.len() - 1] {
            assert!(matches!(
                EmbeddingFile::from_bytes(&bytes[..cut]),
                Err(FormatError::Truncated { .. })
            ));
        }

        let mut padded = f.to_bytes();
        padded.push(0);
        assert!(matches!(
            EmbeddingFile::from_bytes(&padded),
            Err(FormatError::TrailingBytes { extra: 1 })
        ));

        let mut versioned = f.to_bytes();
        versioned[8] = 9;
        assert!(matches!(
            EmbeddingFile::from_bytes(&versioned),
            Err(FormatError::UnsupportedVersion { found: 9, .. })
        ));
    }

    #[test]
    fn embedding_cache_enforces_dim_and_unique_ids() {
        let mut f = EmbeddingFile::new(3).unwrap();
        assert!(matches!(
            f.push("a", Matrix::from_vec(1, 2, vec![0.0f32, 1.0]).unwrap()),
            Err(FormatError::DimMismatch { expected: 3, found: 2, .. })
        ));
        f.push("a", Matrix::from_vec(1, 3, vec![0.0f32; 3]).unwrap())
            .unwrap();
        assert!(matches!(
            f.push("a", Matrix::from_vec(1, 3, vec![0.0f32; 3]).unwrap()),
            Err(FormatError::DuplicateId { .. })
        ));
        assert!(matches!(EmbeddingFile::new(0), Err(FormatError::ZeroDim)));
    }
}
