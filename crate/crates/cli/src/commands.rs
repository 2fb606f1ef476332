//! The four subcommands. Each returns a typed error whose kind fixes the
//! process exit code; every artifact lands under the configured output
//! directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use peptrix::contactgraph::build_contact_graph;
use peptrix::encoders::{seq_encode, Provider};
use peptrix::explain::{export_attention_csv, render_heatmap_svg, top_residues, HeatmapSpec};
use peptrix::ioformats::{
    parse_dataset_csv, parse_fasta, parse_pdb_ca, CoordSet, EmbeddingFile, Peptide,
};
use peptrix::model::{forward, ModelParams, ProviderParams};
use peptrix::trainer::{assemble_samples, evaluate, history_csv, train, MetricsReport};
use peptrix::Tape;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ProviderMode, RunConfig};
use crate::errors::{CliError, ExitKind};

/// Trains on the configured dataset and writes `model.ptrixmdl`,
/// `history.csv`, and `manifest.toml` to the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let model_config = cfg.model_config();
    model_config.validate().config_err()?;
    let train_config = cfg.train_config();
    train_config.validate().config_err()?;

    let train_path = require_path(&cfg.train, "train")?;
    let peptides = load_dataset(train_path)?;
    let coords = load_structures(cfg, &peptides)?;
    let provider = load_provider(cfg)?;
    let samples = assemble_samples(&peptides, &coords, cfg.threshold).data_err()?;

    let outcome = train(&samples, &provider, model_config, &train_config).training_err()?;

    create_out_dir(&cfg.out)?;
    outcome
        .params
        .save(&cfg.out.join("model.ptrixmdl"))
        .data_err()?;
    write_text(&cfg.out.join("history.csv"), &history_csv(&outcome.history))?;
    write_text(&cfg.out.join("manifest.toml"), &cfg.manifest(&git_describe()))?;
    println!(
        "trained {} epoch(s), kept epoch {}, wrote {}",
        outcome.history.len(),
        outcome.best_epoch,
        cfg.out.display()
    );
    Ok(())
}

/// Scores the configured test set with a saved snapshot and prints the
/// metrics as an aligned table followed by one line of JSON.
pub fn cmd_eval(cfg: &RunConfig, model_path: &Path) -> Result<(), CliError> {
    let params = load_model(model_path)?;
    let test_path = require_path(&cfg.test, "test")?;
    let peptides = load_dataset(test_path)?;
    let coords = load_structures(cfg, &peptides)?;
    let provider = provider_for(&params, cfg)?;
    // the snapshot's threshold rebuilds the graphs the model was trained on
    let samples = assemble_samples(&peptides, &coords, params.config.threshold).data_err()?;
    let report = evaluate(&params, &provider, &samples).data_err()?;
    print!("{}", report.table());
    println!("{}", metrics_json(&report));
    Ok(())
}

/// Runs one peptide through a saved snapshot and writes both attention
/// directions as CSV + SVG plus a ranked-residue report: five files named
/// after the peptide id.
pub fn cmd_explain(cfg: &RunConfig, model_path: &Path, id: &str, k: usize) -> Result<(), CliError> {
    if k == 0 {
        return Err(CliError::config("report size k must be at least 1"));
    }
    let params = load_model(model_path)?;
    let peptide = find_peptide(cfg, id)?;
    let pdb_dir = require_path(&cfg.pdb_dir, "pdb_dir")?;
    let pdb_path = pdb_dir.join(format!("{id}.pdb"));
    let text = read_text(&pdb_path)?;
    let coords = parse_pdb_ca(id, &text)
        .map_err(|e| CliError::data(format!("{}: {e}", pdb_path.display())))?;
    if coords.len() != peptide.len() {
        return Err(CliError::data(format!(
            "{id}: {} residues in the dataset but {} alpha carbons in {}",
            peptide.len(),
            coords.len(),
            pdb_path.display()
        )));
    }
    let graph = build_contact_graph(&coords, params.config.threshold).data_err()?;
    let provider = provider_for(&params, cfg)?;

    let tape = Tape::new();
    let bound = params.bind(&tape, &provider).data_err()?;
    let pass = forward(&tape, &bound, &peptide, &graph).data_err()?;

    create_out_dir(&cfg.out)?;
    let file = |suffix: &str| cfg.out.join(format!("{id}_{suffix}"));
    export_attention_csv(&pass.seq_to_struct, &file("seq2struct.csv")).data_err()?;
    render_heatmap_svg(&HeatmapSpec::new(&pass.seq_to_struct), &file("seq2struct.svg"))
        .data_err()?;
    export_attention_csv(&pass.struct_to_seq, &file("struct2seq.csv")).data_err()?;
    render_heatmap_svg(&HeatmapSpec::new(&pass.struct_to_seq), &file("struct2seq.svg"))
        .data_err()?;

    let max_k = pass.seq_to_struct.key_labels().len();
    let ranked = top_residues(&pass.seq_to_struct, k.min(max_k)).data_err()?;
    let mut report = String::from("# structure residues ranked by attention received\n");
    for (rank, (label, score)) in ranked.iter().enumerate() {
        report.push_str(&format!("{}. {} {:.6}\n", rank + 1, label, score));
    }
    write_text(&file("top_residues.txt"), &report)?;
    println!("wrote 5 files for {id} to {}", cfg.out.display());
    Ok(())
}

/// Encodes every FASTA record into per-residue feature rows and writes them
/// as one embedding cache. Table mode derives features from a seeded fresh
/// table; file mode re-projects an existing cache to the configured width.
pub fn cmd_embed(cfg: &RunConfig) -> Result<(), CliError> {
    let model_config = cfg.model_config();
    model_config.validate().config_err()?;
    let fasta_path = require_path(&cfg.fasta, "fasta")?;
    let text = read_text(fasta_path)?;
    let peptides = parse_fasta(&text)
        .map_err(|e| CliError::data(format!("{}: {e}", fasta_path.display())))?;
    if peptides.is_empty() {
        return Err(CliError::data(format!(
            "no FASTA records in {}",
            fasta_path.display()
        )));
    }
    let provider = load_provider(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = ModelParams::init(model_config, &provider, &mut rng).data_err()?;

    let mut cache_out = EmbeddingFile::new(cfg.dim).data_err()?;
    for p in &peptides {
        let tape = Tape::new();
        let bound = params.bind(&tape, &provider).data_err()?;
        let rows = seq_encode(&tape, p, &bound.provider)
            .map_err(|e| CliError::data(format!("{}: {e}", p.id())))?;
        cache_out
            .push(p.id(), tape.value(rows).cast::<f32>())
            .data_err()?;
    }
    create_out_dir(&cfg.out)?;
    let out_path = cfg.out.join("embeddings.ptrixemb");
    cache_out.save(&out_path).data_err()?;
    println!(
        "wrote {} embedding(s) of width {} to {}",
        cache_out.len(),
        cfg.dim,
        out_path.display()
    );
    Ok(())
}

fn require_path<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::config(format!("required config key {key:?} is not set")))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn load_dataset(path: &Path) -> Result<Vec<Peptide>, CliError> {
    let text = read_text(path)?;
    parse_dataset_csv(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ModelParams, CliError> {
    ModelParams::load(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Reads `<pdb_dir>/<id>.pdb` for every peptide.
fn load_structures(
    cfg: &RunConfig,
    peptides: &[Peptide],
) -> Result<BTreeMap<String, CoordSet>, CliError> {
    let dir = require_path(&cfg.pdb_dir, "pdb_dir")?;
    let mut out = BTreeMap::new();
    for p in peptides {
        let path = dir.join(format!("{}.pdb", p.id()));
        let text = read_text(&path)?;
        let coords = parse_pdb_ca(p.id(), &text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        out.insert(p.id().to_string(), coords);
    }
    Ok(out)
}

/// The feature source named by the run configuration.
fn load_provider(cfg: &RunConfig) -> Result<Provider, CliError> {
    match cfg.provider {
        ProviderMode::Table => Ok(Provider::Table),
        ProviderMode::File => load_cache(cfg).map(Provider::File),
    }
}

/// The feature source a snapshot was trained with; a file-provider snapshot
/// needs the embedding cache on hand.
fn provider_for(params: &ModelParams, cfg: &RunConfig) -> Result<Provider, CliError> {
    match &params.provider {
        ProviderParams::Table(_) => Ok(Provider::Table),
        ProviderParams::File { .. } => load_cache(cfg).map(Provider::File),
    }
}

fn load_cache(cfg: &RunConfig) -> Result<EmbeddingFile, CliError> {
    let path = require_path(&cfg.cache, "cache")?;
    EmbeddingFile::load(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Looks the peptide up in the train set, then the test set.
fn find_peptide(cfg: &RunConfig, id: &str) -> Result<Peptide, CliError> {
    let mut searched: Vec<String> = Vec::new();
    for path in [&cfg.train, &cfg.test].into_iter().flatten() {
        let peptides = load_dataset(path)?;
        if let Some(p) = peptides.into_iter().find(|p| p.id() == id) {
            return Ok(p);
        }
        searched.push(path.display().to_string());
    }
    if searched.is_empty() {
        return Err(CliError::config(
            "explain needs a train or test dataset to look the peptide up in",
        ));
    }
    Err(CliError::data(format!(
        "peptide id {id:?} not found in {}",
        searched.join(", ")
    )))
}

fn metrics_json(r: &MetricsReport) -> String {
    serde_json::json!({
        "precision_0": r.precision[0],
        "precision_1": r.precision[1],
        "recall_0": r.recall[0],
        "recall_1": r.recall[1],
        "f1_weighted": r.f1_weighted,
        "f1_macro": r.f1_macro,
        "support_0": r.support[0],
        "support_1": r.support[1],
    })
    .to_string()
}

/// Source-control stamp for the run manifest; "unknown" outside a checkout.
fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_json_has_exactly_the_published_keys() {
        let report = MetricsReport::from_pairs(&[(0, 0), (1, 1), (1, 0)]).unwrap();
        let json = metrics_json(&report);
        let value: serde_json::Value = json.parse().unwrap();
        let obj = value.as_object().unwrap();
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
        assert_eq!(json.lines().count(), 1);
        assert_eq!(obj["support_0"], serde_json::json!(1));
        assert_eq!(obj["support_1"], serde_json::json!(2));
    }

    #[test]
    fn missing_required_key_is_a_config_error() {
        let cfg = RunConfig::default();
        let err = cmd_train(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("train"));
    }

    #[test]
    fn absent_dataset_file_is_a_data_error_naming_the_path() {
        let mut cfg = RunConfig::default();
        cfg.train = Some(PathBuf::from("/definitely/not/here.csv"));
        let err = cmd_train(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("/definitely/not/here.csv"));
    }
}
