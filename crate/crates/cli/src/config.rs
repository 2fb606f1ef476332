//! Run configuration resolved in three layers: built-in defaults, then a
//! flat TOML file, then command-line flags. Relative paths inside the file
//! resolve against the file's own directory, so a config ships alongside its
//! data; paths given as flags resolve against the working directory.

use std::path::{Path, PathBuf};

use clap::Args;
use peptrix::losses::LossConfig;
use peptrix::model::ModelConfig;
use peptrix::numkit::Activation;
use peptrix::trainer::TrainConfig;

use crate::errors::CliError;

/// Where per-residue features come from: a trainable lookup table or a
/// precomputed embedding cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderMode {
    Table,
    File,
}

impl ProviderMode {
    pub fn label(self) -> &'static str {
        match self {
            ProviderMode::Table => "table",
            ProviderMode::File => "file",
        }
    }

    fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "table" => Ok(ProviderMode::Table),
            "file" => Ok(ProviderMode::File),
            other => Err(CliError::config(format!(
                "provider must be \"table\" or \"file\", got {other:?}"
            ))),
        }
    }
}

/// Flags shared by every subcommand. Anything left unset falls back to the
/// config file, then to the built-in defaults.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Flat TOML config file (key = value pairs, no sections)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for initialization, data splitting, and shuffling
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the contrastive term in the hybrid loss
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Contrastive temperature
    #[arg(long)]
    pub tau: Option<f64>,
    /// Embedding width shared by both encoders
    #[arg(long)]
    pub dim: Option<usize>,
    /// Contact distance threshold in angstroms
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Attention heads per graph layer
    #[arg(long)]
    pub heads: Option<usize>,
    /// Residue feature source: "table" or "file"
    #[arg(long, value_name = "MODE")]
    pub provider: Option<String>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Every knob a run can turn, fully resolved.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub pdb_dir: Option<PathBuf>,
    pub fasta: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub out: PathBuf,
    pub dim: usize,
    pub gat_layers: usize,
    pub heads: usize,
    pub threshold: f64,
    pub provider: ProviderMode,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr0: f64,
    pub gamma: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub tau: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelConfig::default();
        RunConfig {
            train: None,
            test: None,
            pdb_dir: None,
            fasta: None,
            cache: None,
            out: PathBuf::from("peptrix-out"),
            dim: m.dim,
            gat_layers: m.gat_layers,
            heads: m.heads,
            threshold: m.threshold,
            provider: ProviderMode::Table,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            lr0: t.lr0,
            gamma: t.gamma,
            weight_decay: t.weight_decay,
            lambda: t.loss.lambda,
            tau: t.loss.tau,
            seed: t.seed,
        }
    }
}

impl RunConfig {
    pub fn load(overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &overrides.config {
            Some(path) => Self::from_file(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(overrides)?;
        Ok(cfg)
    }

    fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut cfg = RunConfig::default();
        for (key, value) in &table {
            match key.as_str() {
                "train" => cfg.train = Some(path_value(value, key, dir)?),
                "test" => cfg.test = Some(path_value(value, key, dir)?),
                "pdb_dir" => cfg.pdb_dir = Some(path_value(value, key, dir)?),
                "fasta" => cfg.fasta = Some(path_value(value, key, dir)?),
                "cache" => cfg.cache = Some(path_value(value, key, dir)?),
                "out" => cfg.out = path_value(value, key, dir)?,
                "dim" => cfg.dim = usize_value(value, key)?,
                "gat_layers" => cfg.gat_layers = usize_value(value, key)?,
                "heads" => cfg.heads = usize_value(value, key)?,
                "batch_size" => cfg.batch_size = usize_value(value, key)?,
                "max_epochs" => cfg.max_epochs = usize_value(value, key)?,
                "patience" => cfg.patience = usize_value(value, key)?,
                "threshold" => cfg.threshold = float_value(value, key)?,
                "lr0" => cfg.lr0 = float_value(value, key)?,
                "gamma" => cfg.gamma = float_value(value, key)?,
                "weight_decay" => cfg.weight_decay = float_value(value, key)?,
                "lambda" => cfg.lambda = float_value(value, key)?,
                "tau" => cfg.tau = float_value(value, key)?,
                "seed" => cfg.seed = u64_value(value, key)?,
                "provider" => cfg.provider = ProviderMode::parse(&str_value(value, key)?)?,
                other => {
                    return Err(CliError::config(format!(
                        "unknown config key {other:?} in {}",
                        path.display()
                    )))
                }
            }
        }
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.lambda {
            self.lambda = v;
        }
        if let Some(v) = o.tau {
            self.tau = v;
        }
        if let Some(v) = o.dim {
            self.dim = v;
        }
        if let Some(v) = o.threshold {
            self.threshold = v;
        }
        if let Some(v) = o.heads {
            self.heads = v;
        }
        if let Some(s) = &o.provider {
            self.provider = ProviderMode::parse(s)?;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        Ok(())
    }

    /// Architecture settings derived from this run. The co-attention width
    /// tracks the embedding width.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            dk: self.dim,
            gat_layers: self.gat_layers,
            heads: self.heads,
            activation: Activation::Gelu,
            leaky_slope: 0.2,
            threshold: self.threshold,
            contrastive_post_fusion: false,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            lr0: self.lr0,
            gamma: self.gamma,
            weight_decay: self.weight_decay,
            loss: LossConfig {
                tau: self.tau,
                lambda: self.lambda,
            },
            seed: self.seed,
        }
    }

    /// Manifest text: a comment header with the source-control state, then
    /// every setting as a flat TOML key with paths absolutized. The manifest
    /// itself loads through `--config`, so a finished run can be replayed
    /// from its own output directory.
    pub fn manifest(&self, git: &str) -> String {
        let mut out = String::from("# peptrix run manifest\n");
        out.push_str(&format!("# git: {git}\n"));
        out.push_str(&format!("provider = {}\n", toml_str(self.provider.label())));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("dim = {}\n", self.dim));
        out.push_str(&format!("gat_layers = {}\n", self.gat_layers));
        out.push_str(&format!("heads = {}\n", self.heads));
        out.push_str(&format!("threshold = {}\n", self.threshold));
        out.push_str(&format!("batch_size = {}\n", self.batch_size));
        out.push_str(&format!("max_epochs = {}\n", self.max_epochs));
        out.push_str(&format!("patience = {}\n", self.patience));
        out.push_str(&format!("lr0 = {}\n", self.lr0));
        out.push_str(&format!("gamma = {}\n", self.gamma));
        out.push_str(&format!("weight_decay = {}\n", self.weight_decay));
        out.push_str(&format!("lambda = {}\n", self.lambda));
        out.push_str(&format!("tau = {}\n", self.tau));
        out.push_str(&format!("out = {}\n", toml_path(&self.out)));
        let paths: [(&str, &Option<PathBuf>); 5] = [
            ("train", &self.train),
            ("test", &self.test),
            ("pdb_dir", &self.pdb_dir),
            ("fasta", &self.fasta),
            ("cache", &self.cache),
        ];
        for (key, value) in paths {
            if let Some(p) = value {
                out.push_str(&format!("{key} = {}\n", toml_path(p)));
            }
        }
        out
    }
}

fn toml_str(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Paths land in the manifest absolutized, so replaying it does not depend
/// on where the manifest file itself ends up.
fn toml_path(p: &Path) -> String {
    let abs = std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    toml_str(&abs.display().to_string())
}

fn str_value(v: &toml::Value, key: &str) -> Result<String, CliError> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| CliError::config(format!("config key {key:?} must be a string")))
}

fn path_value(v: &toml::Value, key: &str, dir: &Path) -> Result<PathBuf, CliError> {
    let s = str_value(v, key)?;
    let p = PathBuf::from(s);
    Ok(if p.is_relative() { dir.join(p) } else { p })
}

fn float_value(v: &toml::Value, key: &str) -> Result<f64, CliError> {
    v.as_float()
        .or_else(|| v.as_integer().map(|i| i as f64))
        .ok_or_else(|| CliError::config(format!("config key {key:?} must be a number")))
}

fn usize_value(v: &toml::Value, key: &str) -> Result<usize, CliError> {
    match v.as_integer() {
        Some(i) if i >= 0 => Ok(i as usize),
        _ => Err(CliError::config(format!(
            "config key {key:?} must be a non-negative integer"
        ))),
    }
}

fn u64_value(v: &toml::Value, key: &str) -> Result<u64, CliError> {
    match v.as_integer() {
        Some(i) if i >= 0 => Ok(i as u64),
        _ => Err(CliError::config(format!(
            "config key {key:?} must be a non-negative integer"
        ))),
    }
}
