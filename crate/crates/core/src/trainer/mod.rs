//! Mini-batch training loop: seeded shuffling, Adam with decoupled weight
//! decay, exponential learning-rate schedule, early stopping on a stratified
//! validation split, and evaluation metrics.
//!
//! Everything downstream of the run seed is deterministic: initialization,
//! the validation split, per-epoch batch order, and therefore the loss
//! history and the returned snapshot.

pub mod adamw;
pub mod metrics;

pub use adamw::{adamw_step, AdamState};
pub use metrics::MetricsReport;

use crate::contactgraph::{build_contact_graph, GraphBuildError, ResidueGraph};
use crate::encoders::Provider;
use crate::ioformats::{CoordSet, Peptide};
use crate::losses::{self, LossBreakdown, LossConfig, LossError};
use crate::model::{self, BoundModel, ModelConfig, ModelError, ModelParams};
use crate::numkit::Node;
use crate::{Real, Tape};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    BadConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no coordinates for peptide {id:?}")]
    MissingCoords { id: String },
    #[error("peptide {id:?} has {residues} residues but {points} coordinate points")]
    CoordCount {
        id: String,
        residues: usize,
        points: usize,
    },
    #[error("peptide {id:?} carries no label")]
    Unlabeled { id: String },
    #[error("stratified split left one side empty ({n} samples at holdout {frac})")]
    EmptySplit { n: usize, frac: Real },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("class label {0} out of range")]
    BadClass(u8),
    #[error("optimizer state does not match parameter {name:?}")]
    OptimizerShape { name: String },
    #[error(transparent)]
    Graph(#[from] GraphBuildError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// One training or evaluation example: a labeled peptide with its contact
/// graph already built.
#[derive(Debug, Clone)]
pub struct Sample {
    pub peptide: Peptide,
    pub graph: ResidueGraph,
    pub label: u8,
}

/// Pairs every peptide with its coordinate set and builds the contact
/// graphs. Every peptide must be labeled and have a matching coordinate
/// entry of the same length.
pub fn assemble_samples(
    peptides: &[Peptide],
    coords: &BTreeMap<String, CoordSet>,
    threshold: Real,
) -> Result<Vec<Sample>, TrainError> {
    if peptides.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    peptides
        .iter()
        .map(|p| {
            let c = coords.get(p.id()).ok_or_else(|| TrainError::MissingCoords {
                id: p.id().to_string(),
            })?;
            if c.len() != p.len() {
                return Err(TrainError::CoordCount {
                    id: p.id().to_string(),
                    residues: p.len(),
                    points: c.len(),
                });
            }
            let label = p.label().ok_or_else(|| TrainError::Unlabeled {
                id: p.id().to_string(),
            })?;
            Ok(Sample {
                peptide: p.clone(),
                graph: build_contact_graph(c, threshold)?,
                label,
            })
        })
        .collect()
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without validation improvement before stopping.
    pub patience: usize,
    pub lr0: Real,
    /// Per-epoch learning-rate decay factor.
    pub gamma: Real,
    pub weight_decay: Real,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 10,
            patience: 3,
            lr0: 1e-3,
            gamma: 0.9,
            weight_decay: 1e-2,
            loss: LossConfig::default(),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::BadConfig(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::BadConfig("max_epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::BadConfig("patience must be positive".into()));
        }
        // lr0 = 0 is allowed deliberately: it freezes the parameters, which
        // the early-stopping contract relies on.
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(TrainError::BadConfig(format!(
                "lr0 must be non-negative and finite, got {}",
                self.lr0
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(TrainError::BadConfig(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::BadConfig(format!(
                "weight_decay must be non-negative and finite, got {}",
                self.weight_decay
            )));
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// Exponential schedule: `lr0 * gamma^epoch`, epoch counted from 0.
pub fn lr_at(epoch: usize, lr0: Real, gamma: Real) -> Real {
    lr0 * gamma.powi(epoch as i32)
}

/// Fraction of the training portion held out for validation.
const VAL_HOLDOUT: Real = 0.1;
/// Validation loss must drop by more than this to count as improvement;
/// guards patience against float noise.
const IMPROVEMENT: Real = 1e-6;

/// Splits indices into `(main, holdout)` per class: each class's indices
/// are shuffled, `round(frac * n_c)` of them (at least 1, at most n_c - 1)
/// go to the holdout. A single-member class stays in `main`. Both returned
/// lists are sorted.
pub fn stratified_split(
    labels: &[u8],
    holdout_frac: Real,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if !(holdout_frac > 0.0 && holdout_frac < 1.0) {
        return Err(TrainError::BadConfig(format!(
            "holdout fraction must lie in (0, 1), got {holdout_frac}"
        )));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        if l > 1 {
            return Err(TrainError::BadClass(l));
        }
        by_class[l as usize].push(i);
    }
    let mut main = Vec::new();
    let mut holdout = Vec::new();
    for idx in &mut by_class {
        idx.shuffle(rng);
        match idx.len() {
            0 => {}
            1 => main.push(idx[0]),
            n => {
                let k = ((n as Real * holdout_frac).round() as usize).clamp(1, n - 1);
                holdout.extend_from_slice(&idx[..k]);
                main.extend_from_slice(&idx[k..]);
            }
        }
    }
    main.sort_unstable();
    holdout.sort_unstable();
    if main.is_empty() || holdout.is_empty() {
        return Err(TrainError::EmptySplit {
            n: labels.len(),
            frac: holdout_frac,
        });
    }
    Ok((main, holdout))
}

/// One epoch's logged quantities. Loss columns are sample-weighted means
/// over the epoch's batches; `train_con` is the raw (unweighted by lambda)
/// contrastive value, 0 for batches that skip it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: Real,
    pub train_total: Real,
    pub train_cls: Real,
    pub train_con: Real,
    pub val_total: Real,
}

/// History serialized as CSV, one row per epoch.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_total,train_cls,train_con,val_total\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.lr, r.train_total, r.train_cls, r.train_con, r.val_total
        ));
    }
    out
}

/// Training result: the snapshot with the best validation loss, the full
/// epoch history, and which epoch the snapshot came from (1-based).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Builds the hybrid objective for one batch on an existing tape: mean
/// classification loss over the batch, plus the temperature-scaled
/// contrastive term unless lambda is 0 or the batch has a single sample
/// (contrast needs at least one negative).
fn batch_objective(
    tape: &Tape,
    bound: &BoundModel,
    samples: &[Sample],
    chunk: &[usize],
    loss: &LossConfig,
) -> Result<(Node, LossBreakdown), TrainError> {
    let mut bces = Vec::with_capacity(chunk.len());
    let mut z_seq = Vec::with_capacity(chunk.len());
    let mut z_struct = Vec::with_capacity(chunk.len());
    for &i in chunk {
        let s = &samples[i];
        let pass = model::forward(tape, bound, &s.peptide, &s.graph)?;
        bces.push(losses::bce(tape, pass.probability, s.label)?);
        let (zs, zg) = model::contrastive_pair_of(bound, &pass);
        z_seq.push(zs);
        z_struct.push(zg);
    }
    let stacked = tape.stack_rows(&bces).map_err(LossError::from)?;
    let cls = tape.scale(tape.sum_all(stacked), 1.0 / chunk.len() as Real);
    let con = if loss.lambda > 0.0 && chunk.len() >= 2 {
        Some(losses::info_nce(tape, &z_seq, &z_struct, loss.tau)?)
    } else {
        None
    };
    Ok(losses::hybrid(tape, cls, con, loss.lambda)?)
}

/// Mean hybrid loss over a sample set, evaluated in fixed-order chunks of
/// `batch_size` without touching gradients.
fn set_loss(
    samples: &[Sample],
    idx: &[usize],
    provider: &Provider,
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<Real, TrainError> {
    let mut acc = 0.0;
    for chunk in idx.chunks(config.batch_size) {
        let tape = Tape::new();
        let bound = params.bind(&tape, provider)?;
        let (_, breakdown) = batch_objective(&tape, &bound, samples, chunk, &config.loss)?;
        acc += breakdown.total * chunk.len() as Real;
    }
    Ok(acc / idx.len() as Real)
}

/// Full training run. Initializes parameters from the run seed, holds out a
/// stratified validation split, then iterates seeded-shuffled mini-batches,
/// stopping early when validation loss fails to improve for `patience`
/// consecutive epochs. Returns the best-validation snapshot.
pub fn train(
    samples: &[Sample],
    provider: &Provider,
    model_config: ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    model_config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(model_config, provider, &mut rng)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let (train_idx, val_idx) = stratified_split(&labels, VAL_HOLDOUT, &mut rng)?;

    let mut state = AdamState::new(&params);
    let mut history = Vec::new();
    let mut best: Option<(Real, ModelParams, usize)> = None;
    let mut stale = 0usize;

    for e in 0..config.max_epochs {
        let lr = lr_at(e, config.lr0, config.gamma);
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);

        let mut sum_total = 0.0;
        let mut sum_cls = 0.0;
        let mut sum_con = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let tape = Tape::new();
            let bound = params.bind(&tape, provider)?;
            let (objective, breakdown) =
                batch_objective(&tape, &bound, samples, chunk, &config.loss)?;
            tape.backward(objective).map_err(LossError::from)?;
            params.zero_grads();
            params.accumulate_grads(&tape, &bound);
            adamw_step(&mut params, &mut state, lr, config.weight_decay)?;
            let w = chunk.len() as Real;
            sum_total += breakdown.total * w;
            sum_cls += breakdown.classification * w;
            sum_con += breakdown.contrastive * w;
        }

        let n = train_idx.len() as Real;
        let val_total = set_loss(samples, &val_idx, provider, &params, config)?;
        let record = EpochRecord {
            epoch: e + 1,
            lr,
            train_total: sum_total / n,
            train_cls: sum_cls / n,
            train_con: sum_con / n,
            val_total,
        };
        log::info!(
            "epoch {} lr {:.3e} train {:.6} val {:.6}",
            record.epoch,
            record.lr,
            record.train_total,
            record.val_total
        );
        history.push(record);

        let improved = match &best {
            None => true,
            Some((best_val, _, _)) => val_total < best_val - IMPROVEMENT,
        };
        if improved {
            best = Some((val_total, params.clone(), e + 1));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let (_, best_params, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params: best_params,
        history,
        best_epoch,
    })
}

/// Classifies every sample at the 0.5 probability threshold and reports the
/// resulting metrics.
pub fn evaluate(
    params: &ModelParams,
    provider: &Provider,
    samples: &[Sample],
) -> Result<MetricsReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyEvalSet);
    }
    let mut pairs = Vec::with_capacity(samples.len());
    for s in samples {
        let tape = Tape::new();
        let bound = params.bind(&tape, provider)?;
        let pass = model::forward(&tape, &bound, &s.peptide, &s.graph)?;
        let p = tape.scalar_value(pass.probability);
        pairs.push((s.label, u8::from(p >= 0.5)));
    }
    MetricsReport::from_pairs(&pairs)
}
