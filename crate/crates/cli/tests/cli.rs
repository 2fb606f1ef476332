//! End-to-end subprocess tests of the `peptrix` binary: the exit-code
//! contract, stderr shape, and the files each command leaves behind.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use common::{dataset_csv, fasta_text, run_cli, write_pdbs};
use peptrix::ioformats::EmbeddingFile;
use peptrix::synth::planted_motif_corpus;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn fixture_config() -> String {
    fixtures().join("config.toml").display().to_string()
}

/// Last non-empty stdout line parsed as a JSON object.
fn last_json_line(stdout: &str) -> serde_json::Map<String, serde_json::Value> {
    let line = stdout
        .lines()
        .filter(|l| !l.trim().is_empty())
        .next_back()
        .expect("stdout has a JSON line");
    let value: serde_json::Value = serde_json::from_str(line).expect("valid JSON");
    value.as_object().expect("JSON object").clone()
}

/// Trains on the bundled fixture into `out`, returning the model path.
fn train_fixture(out: &Path) -> PathBuf {
    let (code, _, stderr) = run_cli(
        out,
        &[
            "train",
            "--config",
            &fixture_config(),
            "--out",
            &out.display().to_string(),
        ],
    );
    assert_eq!(code, 0, "fixture training failed: {stderr}");
    out.join("model.ptrixmdl")
}

#[test]
fn train_on_bundled_fixture_writes_three_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, stderr) = run_cli(
        dir.path(),
        &[
            "train",
            "--config",
            &fixture_config(),
            "--out",
            &dir.path().join("run").display().to_string(),
        ],
    );
    assert_eq!(code, 0, "stderr: {stderr}");
    assert!(stderr.is_empty(), "quiet by default, got: {stderr}");
    assert!(stdout.contains("wrote"));
    for name in ["model.ptrixmdl", "history.csv", "manifest.toml"] {
        assert!(dir.path().join("run").join(name).is_file(), "missing {name}");
    }
    let history = fs::read_to_string(dir.path().join("run/history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(
        lines.next(),
        Some("epoch,lr,train_total,train_cls,train_con,val_total")
    );
    assert!(lines.count() >= 1);
}

#[test]
fn info_logging_reports_epochs_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_peptrix"))
        .args([
            "train",
            "--config",
            &fixture_config(),
            "--out",
            &dir.path().join("run").display().to_string(),
        ])
        .env("PEPTRIX_LOG", "info")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("epoch"), "expected epoch logs, got: {stderr}");
}

#[test]
fn missing_train_csv_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    fs::write(&config, "train = \"absent.csv\"\npdb_dir = \".\"\n").unwrap();
    let (code, _, stderr) = run_cli(
        dir.path(),
        &["train", "--config", &config.display().to_string()],
    );
    assert_eq!(code, 2, "stderr: {stderr}");
    assert!(stderr.starts_with("error: data: "), "{stderr}");
    assert!(stderr.contains("absent.csv"), "{stderr}");
    assert_eq!(stderr.trim().lines().count(), 1);
}

#[test]
fn lambda_flag_overrides_the_config_file_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (code, _, stderr) = run_cli(
        dir.path(),
        &[
            "train",
            "--config",
            &fixture_config(),
            "--lambda",
            "0.1",
            "--out",
            &out.display().to_string(),
        ],
    );
    assert_eq!(code, 0, "stderr: {stderr}");
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("\nlambda = 0.1\n"), "{manifest}");
    assert!(manifest.contains("# git: "), "{manifest}");
    assert!(!manifest.contains("lambda = 0.5"));
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    fs::write(&config, "mystery = 1\n").unwrap();
    let (code, _, stderr) = run_cli(
        dir.path(),
        &["train", "--config", &config.display().to_string()],
    );
    assert_eq!(code, 1, "stderr: {stderr}");
    assert!(stderr.starts_with("error: config: "), "{stderr}");
    assert!(stderr.contains("mystery"), "{stderr}");
}

#[test]
fn unknown_flag_exits_1_with_one_stderr_line() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, stderr) = run_cli(dir.path(), &["train", "--wat"]);
    assert_eq!(code, 1);
    assert!(stdout.is_empty());
    assert_eq!(stderr.trim().lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error: config: "), "{stderr}");
}

#[test]
fn help_and_version_exit_0() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run_cli(dir.path(), &["--help"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("peptrix"));
    let (code, stdout, _) = run_cli(dir.path(), &["--version"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("peptrix"));
}

#[test]
fn eval_prints_a_table_and_json_with_exactly_8_keys() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_fixture(dir.path());
    let (code, stdout, stderr) = run_cli(
        dir.path(),
        &[
            "eval",
            "--model",
            &model.display().to_string(),
            "--config",
            &fixture_config(),
        ],
    );
    assert_eq!(code, 0, "stderr: {stderr}");
    assert!(stdout.contains("weighted"), "table missing: {stdout}");
    let obj = last_json_line(&stdout);
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        [
            "f1_macro",
            "f1_weighted",
            "precision_0",
            "precision_1",
            "recall_0",
            "recall_1",
            "support_0",
            "support_1"
        ]
    );
    let total = obj["support_0"].as_u64().unwrap() + obj["support_1"].as_u64().unwrap();
    assert_eq!(total, 8, "fixture test set has 8 peptides");
}

#[test]
fn corrupted_snapshot_magic_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_fixture(dir.path());
    let mut bytes = fs::read(&model).unwrap();
    bytes[0] ^= 0xFF;
    let bad = dir.path().join("bad.ptrixmdl");
    fs::write(&bad, bytes).unwrap();
    let (code, _, stderr) = run_cli(
        dir.path(),
        &[
            "eval",
            "--model",
            &bad.display().to_string(),
            "--config",
            &fixture_config(),
        ],
    );
    assert_eq!(code, 2, "stderr: {stderr}");
    assert!(stderr.starts_with("error: data: "), "{stderr}");
}

#[test]
fn explain_writes_five_files_for_a_known_id() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_fixture(dir.path());
    let out = dir.path().join("explained");
    let (code, stdout, stderr) = run_cli(
        dir.path(),
        &[
            "explain",
            "--model",
            &model.display().to_string(),
            "--id",
            "syn000",
            "--config",
            &fixture_config(),
            "--out",
            &out.display().to_string(),
        ],
    );
    assert_eq!(code, 0, "stderr: {stderr}");
    assert!(stdout.contains("5 files"));
    for name in [
        "syn000_seq2struct.csv",
        "syn000_seq2struct.svg",
        "syn000_struct2seq.csv",
        "syn000_struct2seq.svg",
        "syn000_top_residues.txt",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let report = fs::read_to_string(out.join("syn000_top_residues.txt")).unwrap();
    let first = report.lines().nth(1).unwrap();
    assert!(first.starts_with("1. "), "{report}");
    // fixture peptides have 10 residues, so the default k = 10 fits exactly
    assert_eq!(report.lines().count(), 11, "{report}");
}

#[test]
fn explain_unknown_id_exits_2_naming_the_id() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_fixture(dir.path());
    let (code, _, stderr) = run_cli(
        dir.path(),
        &[
            "explain",
            "--model",
            &model.display().to_string(),
            "--id",
            "nope99",
            "--config",
            &fixture_config(),
            "--out",
            &dir.path().join("x").display().to_string(),
        ],
    );
    assert_eq!(code, 2, "stderr: {stderr}");
    assert!(stderr.contains("nope99"), "{stderr}");
}

#[test]
fn embed_writes_a_cache_with_three_entries_at_model_width() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("emb");
    let (code, _, stderr) = run_cli(
        dir.path(),
        &[
            "embed",
            "--config",
            &fixture_config(),
            "--out",
            &out.display().to_string(),
        ],
    );
    assert_eq!(code, 0, "stderr: {stderr}");
    let cache = EmbeddingFile::load(&out.join("embeddings.ptrixemb")).unwrap();
    assert_eq!(cache.len(), 3);
    assert_eq!(cache.dim(), 8);
    for (_, rows) in cache.iter() {
        assert_eq!(rows.rows(), 10);
    }
}

#[test]
fn embed_empty_fasta_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.fasta"), "").unwrap();
    let config = dir.path().join("config.toml");
    fs::write(&config, "fasta = \"empty.fasta\"\n").unwrap();
    let (code, _, stderr) = run_cli(
        dir.path(),
        &["embed", "--config", &config.display().to_string()],
    );
    assert_eq!(code, 2, "stderr: {stderr}");
    assert!(stderr.starts_with("error: data: "), "{stderr}");
}

#[test]
fn embed_then_train_with_file_provider_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    // seed chosen deterministically so the 16-peptide set has both classes
    let corpus = (0u64..)
        .map(|seed| planted_motif_corpus(16, 12, seed))
        .find(|c| {
            let pos = c.peptides.iter().filter(|p| p.label() == Some(1)).count();
            (6..=10).contains(&pos)
        })
        .unwrap();
    fs::write(dir.path().join("train.csv"), dataset_csv(&corpus, 0..16)).unwrap();
    fs::write(dir.path().join("peps.fasta"), fasta_text(&corpus, 0..16)).unwrap();
    write_pdbs(&dir.path().join("pdb"), &corpus);
    let config = dir.path().join("config.toml");
    fs::write(
        &config,
        "train = \"train.csv\"\npdb_dir = \"pdb\"\nfasta = \"peps.fasta\"\n\
         cache = \"emb/embeddings.ptrixemb\"\ndim = 8\ngat_layers = 1\nheads = 1\n\
         batch_size = 4\nmax_epochs = 2\npatience = 2\n",
    )
    .unwrap();

    let (code, _, stderr) = run_cli(
        dir.path(),
        &[
            "embed",
            "--config",
            &config.display().to_string(),
            "--out",
            &dir.path().join("emb").display().to_string(),
        ],
    );
    assert_eq!(code, 0, "embed failed: {stderr}");

    let (code, _, stderr) = run_cli(
        dir.path(),
        &[
            "train",
            "--config",
            &config.display().to_string(),
            "--provider",
            "file",
            "--out",
            &dir.path().join("run").display().to_string(),
        ],
    );
    assert_eq!(code, 0, "file-provider training failed: {stderr}");
    assert!(dir.path().join("run/model.ptrixmdl").is_file());
    let manifest = fs::read_to_string(dir.path().join("run/manifest.toml")).unwrap();
    assert!(manifest.contains("provider = \"file\""), "{manifest}");
}

#[test]
fn overfit_fixture_memorizes_its_training_set() {
    let dir = tempfile::tempdir().unwrap();
    let overfit = fixtures().join("overfit.toml").display().to_string();
    let out = dir.path().join("run");
    let (code, _, stderr) = run_cli(
        dir.path(),
        &[
            "train",
            "--config",
            &overfit,
            "--out",
            &out.display().to_string(),
        ],
    );
    assert_eq!(code, 0, "stderr: {stderr}");
    let (code, stdout, stderr) = run_cli(
        dir.path(),
        &[
            "eval",
            "--model",
            &out.join("model.ptrixmdl").display().to_string(),
            "--config",
            &overfit,
        ],
    );
    assert_eq!(code, 0, "stderr: {stderr}");
    let obj = last_json_line(&stdout);
    assert_eq!(obj["f1_weighted"].as_f64().unwrap(), 1.0, "{stdout}");
}

/// Rebuilds the committed fixture corpus from the synthesizer; run it after
/// changing the generator or the on-disk formats:
/// `cargo test -p peptrix-cli --test cli -- --ignored regenerate`
#[test]
#[ignore = "rewrites fixtures/ in the source tree"]
fn regenerate_fixture_corpus() {
    let dir = fixtures();
    // seed chosen deterministically so both file slices are class-balanced
    let corpus = (0u64..)
        .map(|seed| planted_motif_corpus(24, 10, seed))
        .find(|c| {
            let pos = |r: std::ops::Range<usize>| {
                c.peptides[r]
                    .iter()
                    .filter(|p| p.label() == Some(1))
                    .count()
            };
            (6..=10).contains(&pos(0..16)) && (3..=5).contains(&pos(16..24))
        })
        .unwrap();
    fs::write(dir.join("train.csv"), dataset_csv(&corpus, 0..16)).unwrap();
    fs::write(dir.join("test.csv"), dataset_csv(&corpus, 16..24)).unwrap();
    fs::write(dir.join("peps.fasta"), fasta_text(&corpus, 0..3)).unwrap();
    let pdb = dir.join("pdb");
    let _ = fs::remove_dir_all(&pdb);
    write_pdbs(&pdb, &corpus);
}
