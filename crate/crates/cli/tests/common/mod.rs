//! Helpers shared by the CLI and acceptance test targets: corpus file
//! writing and binary invocation.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use peptrix::ioformats::format_ca_pdb;
use peptrix::synth::SynthCorpus;

/// Runs the built `peptrix` binary with `args` in `cwd` and returns
/// `(exit code, stdout, stderr)`.
pub fn run_cli(cwd: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_peptrix"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn peptrix binary");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Dataset CSV text for a slice of the corpus.
pub fn dataset_csv(corpus: &SynthCorpus, range: std::ops::Range<usize>) -> String {
    let mut csv = String::from("id,sequence,label\n");
    for p in &corpus.peptides[range] {
        csv.push_str(&format!(
            "{},{},{}\n",
            p.id(),
            p.sequence(),
            p.label().expect("synthetic peptides are labeled")
        ));
    }
    csv
}

/// FASTA text for a slice of the corpus.
pub fn fasta_text(corpus: &SynthCorpus, range: std::ops::Range<usize>) -> String {
    let mut out = String::new();
    for p in &corpus.peptides[range] {
        out.push_str(&format!(">{}\n{}\n", p.id(), p.sequence()));
    }
    out
}

/// Writes one `.pdb` per corpus entry into `dir`.
pub fn write_pdbs(dir: &Path, corpus: &SynthCorpus) {
    fs::create_dir_all(dir).unwrap();
    for (p, c) in corpus.peptides.iter().zip(&corpus.coords) {
        fs::write(dir.join(format!("{}.pdb", p.id())), format_ca_pdb(p, c)).unwrap();
    }
}

/// Writes a complete runnable corpus (train.csv covering everything, pdb/
/// directory) plus a config file, and returns the config path.
pub fn write_run_dir(dir: &Path, corpus: &SynthCorpus, config_body: &str) -> PathBuf {
    fs::write(dir.join("train.csv"), dataset_csv(corpus, 0..corpus.len())).unwrap();
    write_pdbs(&dir.join("pdb"), corpus);
    let config = dir.join("config.toml");
    fs::write(&config, config_body).unwrap();
    config
}
