//! Model assembly: configuration, parameter storage, the full forward pass
//! for one peptide, and binary snapshots.
//!
//! The pipeline per peptide: residue features from the sequence provider,
//! stacked graph attention over the contact graph for the structure view,
//! bidirectional co-attention between the two views, mean pooling, and a
//! linear head squashed to a probability. Pre-fusion pooled embeddings feed
//! the contrastive loss by default; the post-fusion pair is available
//! behind a config switch.

use crate::contactgraph::ResidueGraph;
use crate::encoders::{
    self, Activation, AttentionCoefficients, BoundGatLayer, BoundProvider, EncodeError,
    GatHeadParams, GatLayerParams, Provider,
};
use crate::fusion::{
    self, AttentionMap, BoundCoAttention, CoAttentionParams, FusionError, Modality,
};
use crate::ioformats::{bytes, FormatError, Peptide};
use crate::numkit::{Node, NumKitError};
use crate::{Matrix, Param, Real, Tape, ALPHABET};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config: {0}")]
    BadConfig(String),
    #[error("head count {heads} does not divide feature dim {dim}")]
    HeadsDontDivide { heads: usize, dim: usize },
    #[error("snapshot stores provider {snapshot:?} but a {given:?} provider was supplied")]
    ProviderMismatch {
        snapshot: &'static str,
        given: &'static str,
    },
    #[error("snapshot expects an embedding cache of dim {snapshot}, got {cache}")]
    CacheDimMismatch { snapshot: usize, cache: usize },
    #[error("snapshot alphabet {stored:?} does not match this build")]
    AlphabetMismatch { stored: String },
    #[error("snapshot meta key {key:?} missing or out of range")]
    BadMeta { key: &'static str },
    #[error("snapshot is missing matrix {name:?}")]
    MissingMatrix { name: String },
    #[error("snapshot contains unknown matrix {name:?}")]
    UnknownMatrix { name: String },
    #[error("matrix {name:?} is {found:?} in the snapshot, expected {expected:?}")]
    MatrixShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Tape(#[from] NumKitError),
}

/// Architecture hyperparameters. `dim` is the shared feature width of both
/// modality encoders; `dk` the co-attention projection width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub dk: usize,
    pub gat_layers: usize,
    pub heads: usize,
    pub activation: Activation,
    pub leaky_slope: Real,
    /// Contact threshold the graphs were built with; carried in snapshots so
    /// evaluation reconstructs the same graphs.
    pub threshold: Real,
    /// Feed the contrastive loss post-fusion pooled pairs instead of the
    /// default pre-fusion ones.
    pub contrastive_post_fusion: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            dk: 64,
            gat_layers: 2,
            heads: 1,
            activation: Activation::Gelu,
            leaky_slope: 0.2,
            threshold: 8.0,
            contrastive_post_fusion: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("dim", self.dim),
            ("dk", self.dk),
            ("gat_layers", self.gat_layers),
            ("heads", self.heads),
        ] {
            if v == 0 {
                return Err(ModelError::BadConfig(format!("{name} must be positive")));
            }
        }
        if self.dim % self.heads != 0 {
            return Err(ModelError::HeadsDontDivide {
                heads: self.heads,
                dim: self.dim,
            });
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(ModelError::BadConfig(format!(
                "leaky_slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(ModelError::BadConfig(format!(
                "threshold must be positive and finite, got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Sequence-provider parameters, matching the provider the model was
/// initialized against.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderParams {
    /// Trainable lookup table, one row per alphabet letter.
    Table(Param),
    /// Frozen cache rows; a trainable projection exists exactly when the
    /// cache dim differs from the model dim.
    File {
        cache_dim: usize,
        projection: Option<Param>,
    },
}

/// All trainable state plus the architecture it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub provider: ProviderParams,
    pub gat: Vec<GatLayerParams>,
    pub coattn: CoAttentionParams,
    pub head_w: Param,
    pub head_b: Param,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as Real).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit))
}

impl ModelParams {
    /// Zero-valued parameter set with the right shapes for `config` and the
    /// given provider.
    fn skeleton(config: ModelConfig, provider: &Provider) -> Result<Self, ModelError> {
        config.validate()?;
        let provider_params = match provider {
            Provider::Table => ProviderParams::Table(Param::new(Matrix::zeros(
                ALPHABET.len(),
                config.dim,
            ))),
            Provider::File(cache) => {
                let cache_dim = cache.dim();
                let projection = if cache_dim == config.dim {
                    None
                } else {
                    Some(Param::new(Matrix::zeros(cache_dim, config.dim)))
                };
                ProviderParams::File {
                    cache_dim,
                    projection,
                }
            }
        };
        let hd = config.head_dim();
        let gat = (0..config.gat_layers)
            .map(|_| GatLayerParams {
                heads: (0..config.heads)
                    .map(|_| GatHeadParams {
                        w: Param::new(Matrix::zeros(hd, config.dim)),
                        a: Param::new(Matrix::zeros(2 * hd, 1)),
                    })
                    .collect(),
            })
            .collect();
        let proj = || Param::new(Matrix::zeros(config.dim, config.dk));
        Ok(ModelParams {
            config,
            provider: provider_params,
            gat,
            coattn: CoAttentionParams {
                sq: proj(),
                sk: proj(),
                sv: proj(),
                gq: proj(),
                gk: proj(),
                gv: proj(),
            },
            head_w: Param::new(Matrix::zeros(1, 2 * config.dk)),
            head_b: Param::new(Matrix::zeros(1, 1)),
        })
    }

    /// Fresh parameters: Xavier-uniform draws in canonical visit order, so a
    /// seed fully determines the initialization. The classifier bias starts
    /// at zero.
    pub fn init(
        config: ModelConfig,
        provider: &Provider,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        let mut params = Self::skeleton(config, provider)?;
        params.visit_mut(|name, p| {
            if name != "head.b" {
                let (r, c) = p.value.shape();
                p.value = xavier(rng, r, c);
            }
        });
        Ok(params)
    }

    /// Visits every parameter as `(canonical_name, param)`, in a fixed
    /// order: provider, attention layers, co-attention projections, head.
    /// Optimizer state, snapshots, and gradient plumbing all key off this
    /// one ordering.
    pub fn visit(&self, mut f: impl FnMut(&str, &Param)) {
        match &self.provider {
            ProviderParams::Table(t) => f("provider.table", t),
            ProviderParams::File { projection, .. } => {
                if let Some(p) = projection {
                    f("provider.projection", p);
                }
            }
        }
        for (l, layer) in self.gat.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                f(&format!("gat{l}.head{h}.w"), &head.w);
                f(&format!("gat{l}.head{h}.a"), &head.a);
            }
        }
        f("coattn.sq", &self.coattn.sq);
        f("coattn.sk", &self.coattn.sk);
        f("coattn.sv", &self.coattn.sv);
        f("coattn.gq", &self.coattn.gq);
        f("coattn.gk", &self.coattn.gk);
        f("coattn.gv", &self.coattn.gv);
        f("head.w", &self.head_w);
        f("head.b", &self.head_b);
    }

    /// Mutable twin of [`ModelParams::visit`], same order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Param)) {
        match &mut self.provider {
            ProviderParams::Table(t) => f("provider.table", t),
            ProviderParams::File { projection, .. } => {
                if let Some(p) = projection {
                    f("provider.projection", p);
                }
            }
        }
        for (l, layer) in self.gat.iter_mut().enumerate() {
            for (h, head) in layer.heads.iter_mut().enumerate() {
                f(&format!("gat{l}.head{h}.w"), &mut head.w);
                f(&format!("gat{l}.head{h}.a"), &mut head.a);
            }
        }
        f("coattn.sq", &mut self.coattn.sq);
        f("coattn.sk", &mut self.coattn.sk);
        f("coattn.sv", &mut self.coattn.sv);
        f("coattn.gq", &mut self.coattn.gq);
        f("coattn.gk", &mut self.coattn.gk);
        f("coattn.gv", &mut self.coattn.gv);
        f("head.w", &mut self.head_w);
        f("head.b", &mut self.head_b);
    }

    pub fn zero_grads(&mut self) {
        self.visit_mut(|_, p| p.zero_grad());
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit(|_, p| n += p.value.rows() * p.value.cols());
        n
    }

    /// Registers every parameter on a tape for one forward/backward cycle.
    /// The provider must be the one the parameters were built for.
    pub fn bind<'p>(
        &self,
        tape: &Tape,
        provider: &'p Provider,
    ) -> Result<BoundModel<'p>, ModelError> {
        let bound_provider = match (&self.provider, provider) {
            (ProviderParams::Table(t), Provider::Table) => BoundProvider::Table {
                table: t.leaf(tape),
            },
            (
                ProviderParams::File {
                    cache_dim,
                    projection,
                },
                Provider::File(cache),
            ) => {
                if cache.dim() != *cache_dim {
                    return Err(ModelError::CacheDimMismatch {
                        snapshot: *cache_dim,
                        cache: cache.dim(),
                    });
                }
                BoundProvider::File {
                    cache,
                    projection: projection.as_ref().map(|p| p.leaf(tape)),
                }
            }
            (ProviderParams::Table(_), Provider::File(_)) => {
                return Err(ModelError::ProviderMismatch {
                    snapshot: "table",
                    given: "file",
                })
            }
            (ProviderParams::File { .. }, Provider::Table) => {
                return Err(ModelError::ProviderMismatch {
                    snapshot: "file",
                    given: "table",
                })
            }
        };
        Ok(BoundModel {
            provider: bound_provider,
            gat: self
                .gat
                .iter()
                .map(|l| l.bind(tape, self.config.activation, self.config.leaky_slope))
                .collect(),
            coattn: self.coattn.bind(tape),
            head_w: self.head_w.leaf(tape),
            head_b: self.head_b.leaf(tape),
            contrastive_post_fusion: self.config.contrastive_post_fusion,
        })
    }

    /// Adds the tape gradients of one backward sweep into the parameter
    /// gradient buffers, following the same visit order as [`Self::bind`].
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &BoundModel) {
        let mut nodes: Vec<Node> = Vec::new();
        match &bound.provider {
            BoundProvider::Table { table } => nodes.push(*table),
            BoundProvider::File { projection, .. } => {
                if let Some(p) = projection {
                    nodes.push(*p);
                }
            }
        }
        for layer in &bound.gat {
            for &(w, a) in &layer.heads {
                nodes.push(w);
                nodes.push(a);
            }
        }
        for n in [
            bound.coattn.sq,
            bound.coattn.sk,
            bound.coattn.sv,
            bound.coattn.gq,
            bound.coattn.gk,
            bound.coattn.gv,
            bound.head_w,
            bound.head_b,
        ] {
            nodes.push(n);
        }
        let mut i = 0;
        self.visit_mut(|_, p| {
            p.accumulate(tape, nodes[i]);
            i += 1;
        });
        debug_assert_eq!(i, nodes.len());
    }
}

/// Parameter nodes registered on a tape, plus the provider data needed to
/// encode sequences during the pass.
pub struct BoundModel<'p> {
    pub provider: BoundProvider<'p>,
    pub gat: Vec<BoundGatLayer>,
    pub coattn: BoundCoAttention,
    pub head_w: Node,
    pub head_b: Node,
    contrastive_post_fusion: bool,
}

/// Everything the forward pass of one peptide produces.
pub struct ForwardPass {
    /// Head output, a 1x1 probability node.
    pub probability: Node,
    /// Pooled sequence features before fusion, `1 x dim`.
    pub seq_pooled: Node,
    /// Pooled structure features before fusion, `1 x dim`.
    pub struct_pooled: Node,
    /// Pooled fused features, `1 x dk` each.
    pub seq_fused_pooled: Node,
    pub struct_fused_pooled: Node,
    /// Sequence-queries-structure attention, labeled for export.
    pub seq_to_struct: AttentionMap,
    pub struct_to_seq: AttentionMap,
    /// Edge attention of every graph layer.
    pub gat_attention: Vec<AttentionCoefficients>,
}

impl ForwardPass {
    /// The embedding pair the contrastive loss aligns.
    pub fn contrastive_pair(&self, post_fusion: bool) -> (Node, Node) {
        if post_fusion {
            (self.seq_fused_pooled, self.struct_fused_pooled)
        } else {
            (self.seq_pooled, self.struct_pooled)
        }
    }
}

/// Full forward pass for one peptide whose contact graph is already built.
pub fn forward(
    tape: &Tape,
    bound: &BoundModel,
    peptide: &Peptide,
    graph: &ResidueGraph,
) -> Result<ForwardPass, ModelError> {
    let s0 = encoders::seq_encode(tape, peptide, &bound.provider)?;
    let (g, gat_attention) = encoders::gat_encode(tape, s0, graph, &bound.gat)?;
    let co = fusion::co_attend(tape, s0, g, &bound.coattn)?;

    let seq_pooled = fusion::pool(tape, s0);
    let struct_pooled = fusion::pool(tape, g);
    let seq_fused_pooled = fusion::pool(tape, co.seq_fused);
    let struct_fused_pooled = fusion::pool(tape, co.struct_fused);
    let probability = fusion::classify(
        tape,
        seq_fused_pooled,
        struct_fused_pooled,
        bound.head_w,
        bound.head_b,
    )?;

    let seq_labels: Vec<String> = (0..peptide.len()).map(|i| peptide.residue_tag(i)).collect();
    let struct_labels: Vec<String> = (1..=graph.len()).map(|i| i.to_string()).collect();
    let seq_to_struct = AttentionMap::new(
        co.seq_to_struct,
        Modality::Sequence,
        Modality::Structure,
        seq_labels.clone(),
        struct_labels.clone(),
    )?;
    let struct_to_seq = AttentionMap::new(
        co.struct_to_seq,
        Modality::Structure,
        Modality::Sequence,
        struct_labels,
        seq_labels,
    )?;

    Ok(ForwardPass {
        probability,
        seq_pooled,
        struct_pooled,
        seq_fused_pooled,
        struct_fused_pooled,
        seq_to_struct,
        struct_to_seq,
        gat_attention,
    })
}

/// Convenience twin of [`ForwardPass::contrastive_pair`] driven by the
/// parameters' own config.
pub fn contrastive_pair_of(bound: &BoundModel, pass: &ForwardPass) -> (Node, Node) {
    pass.contrastive_pair(bound.contrastive_post_fusion)
}

// ---------------------------------------------------------------------------
// snapshots

const MDL_MAGIC: &[u8; 8] = b"PTRIXMDL";
const MDL_VERSION: u32 = 1;

fn provider_code(p: &ProviderParams) -> f64 {
    match p {
        ProviderParams::Table(_) => 0.0,
        ProviderParams::File { .. } => 1.0,
    }
}

impl ModelParams {
    /// Serializes architecture meta plus every parameter matrix (f32
    /// little-endian payloads) in canonical visit order. A snapshot written,
    /// read, and written again is bit-identical.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MDL_MAGIC);
        bytes::put_u32(&mut buf, MDL_VERSION);
        bytes::put_str(&mut buf, std::str::from_utf8(ALPHABET).expect("ascii"));

        let cache_dim = match &self.provider {
            ProviderParams::Table(_) => 0,
            ProviderParams::File { cache_dim, .. } => *cache_dim,
        };
        let meta: Vec<(&str, f64)> = vec![
            ("dim", self.config.dim as f64),
            ("dk", self.config.dk as f64),
            ("gat_layers", self.config.gat_layers as f64),
            ("heads", self.config.heads as f64),
            (
                "activation",
                match self.config.activation {
                    Activation::Gelu => 0.0,
                    Activation::Relu => 1.0,
                },
            ),
            ("leaky_slope", self.config.leaky_slope),
            ("threshold", self.config.threshold),
            (
                "contrastive_post",
                f64::from(u8::from(self.config.contrastive_post_fusion)),
            ),
            ("provider", provider_code(&self.provider)),
            ("cache_dim", cache_dim as f64),
        ];
        bytes::put_u32(&mut buf, meta.len() as u32);
        for (key, value) in meta {
            bytes::put_str(&mut buf, key);
            bytes::put_f64(&mut buf, value);
        }

        let mut count = 0u32;
        self.visit(|_, _| count += 1);
        bytes::put_u32(&mut buf, count);
        self.visit(|name, p| {
            bytes::put_str(&mut buf, name);
            bytes::put_u32(&mut buf, p.value.rows() as u32);
            bytes::put_u32(&mut buf, p.value.cols() as u32);
            for &v in p.value.cast::<f32>().data() {
                bytes::put_f32(&mut buf, v);
            }
        });
        buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, ModelError> {
        let mut r = bytes::Reader::new(data);
        let magic = r.take(8, "magic")?;
        if magic != MDL_MAGIC {
            return Err(FormatError::BadMagic {
                expected: "PTRIXMDL",
                found: magic.to_vec(),
            }
            .into());
        }
        let version = r.u32("version")?;
        if version != MDL_VERSION {
            return Err(FormatError::UnsupportedVersion {
                what: "model snapshot",
                found: version,
                supported: MDL_VERSION,
            }
            .into());
        }
        let alphabet = r.string("alphabet")?;
        if alphabet.as_bytes() != ALPHABET {
            return Err(ModelError::AlphabetMismatch { stored: alphabet });
        }

        let meta_count = r.u32("meta count")? as usize;
        let mut meta: BTreeMap<String, f64> = BTreeMap::new();
        for _ in 0..meta_count {
            let key = r.string("meta key")?;
            let value = r.f64("meta value")?;
            meta.insert(key, value);
        }
        let get_usize = |key: &'static str| -> Result<usize, ModelError> {
            let v = *meta.get(key).ok_or(ModelError::BadMeta { key })?;
            if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
                return Err(ModelError::BadMeta { key });
            }
            Ok(v as usize)
        };
        let get_f64 = |key: &'static str| -> Result<f64, ModelError> {
            meta.get(key).copied().ok_or(ModelError::BadMeta { key })
        };

        let config = ModelConfig {
            dim: get_usize("dim")?,
            dk: get_usize("dk")?,
            gat_layers: get_usize("gat_layers")?,
            heads: get_usize("heads")?,
            activation: match get_usize("activation")? {
                0 => Activation::Gelu,
                1 => Activation::Relu,
                _ => return Err(ModelError::BadMeta { key: "activation" }),
            },
            leaky_slope: get_f64("leaky_slope")?,
            threshold: get_f64("threshold")?,
            contrastive_post_fusion: match get_usize("contrastive_post")? {
                0 => false,
                1 => true,
                _ => return Err(ModelError::BadMeta { key: "contrastive_post" }),
            },
        };
        let cache_dim = get_usize("cache_dim")?;
        let provider_params = match get_usize("provider")? {
            0 => ProviderParams::Table(Param::new(Matrix::zeros(ALPHABET.len(), config.dim))),
            1 => {
                if cache_dim == 0 {
                    return Err(ModelError::BadMeta { key: "cache_dim" });
                }
                ProviderParams::File {
                    cache_dim,
                    projection: if cache_dim == config.dim {
                        None
                    } else {
                        Some(Param::new(Matrix::zeros(cache_dim, config.dim)))
                    },
                }
            }
            _ => return Err(ModelError::BadMeta { key: "provider" }),
        };
        config.validate()?;

        let matrix_count = r.u32("matrix count")? as usize;
        let mut stored: BTreeMap<String, Matrix> = BTreeMap::new();
        for _ in 0..matrix_count {
            let name = r.string("matrix name")?;
            let rows = r.u32("matrix rows")? as usize;
            let cols = r.u32("matrix cols")? as usize;
            if rows == 0 || cols == 0 {
                return Err(ModelError::MatrixShape {
                    name,
                    expected: (1, 1),
                    found: (rows, cols),
                });
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(r.f32("matrix payload")? as Real);
            }
            let m = Matrix::from_vec(rows, cols, data)
                .map_err(|_| FormatError::Truncated { at: "matrix payload" })?;
            if stored.insert(name.clone(), m).is_some() {
                return Err(ModelError::UnknownMatrix { name });
            }
        }
        if r.remaining() != 0 {
            return Err(FormatError::TrailingBytes {
                extra: r.remaining(),
            }
            .into());
        }

        let mut params = ModelParams {
            config,
            provider: provider_params,
            gat: (0..config.gat_layers)
                .map(|_| GatLayerParams {
                    heads: (0..config.heads)
                        .map(|_| GatHeadParams {
                            w: Param::new(Matrix::zeros(config.head_dim(), config.dim)),
                            a: Param::new(Matrix::zeros(2 * config.head_dim(), 1)),
                        })
                        .collect(),
                })
                .collect(),
            coattn: CoAttentionParams {
                sq: Param::new(Matrix::zeros(config.dim, config.dk)),
                sk: Param::new(Matrix::zeros(config.dim, config.dk)),
                sv: Param::new(Matrix::zeros(config.dim, config.dk)),
                gq: Param::new(Matrix::zeros(config.dim, config.dk)),
                gk: Param::new(Matrix::zeros(config.dim, config.dk)),
                gv: Param::new(Matrix::zeros(config.dim, config.dk)),
            },
            head_w: Param::new(Matrix::zeros(1, 2 * config.dk)),
            head_b: Param::new(Matrix::zeros(1, 1)),
        };

        let mut error: Option<ModelError> = None;
        params.visit_mut(|name, p| {
            if error.is_some() {
                return;
            }
            match stored.remove(name) {
                Some(m) => {
                    if m.shape() != p.value.shape() {
                        error = Some(ModelError::MatrixShape {
                            name: name.to_string(),
                            expected: p.value.shape(),
                            found: m.shape(),
                        });
                    } else {
                        p.value = m;
                    }
                }
                None => {
                    error = Some(ModelError::MissingMatrix {
                        name: name.to_string(),
                    })
                }
            }
        });
        if let Some(e) = error {
            return Err(e);
        }
        if let Some(name) = stored.into_keys().next() {
            return Err(ModelError::UnknownMatrix { name });
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes()).map_err(FormatError::Io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let data = std::fs::read(path).map_err(FormatError::Io)?;
        Self::from_bytes(&data)
    }
}
