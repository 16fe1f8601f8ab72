//! The three-part network: an MLP encoder, a linear projection head, and a
//! bias-free linear predictor, with head-mode ablations, fan-in-scaled
//! uniform initialization, and a JSON checkpoint format whose decimal
//! encoding round-trips parameters bit-exactly.

use crate::graph::{Graph, GraphError, MapKind, NodeId};
use crate::tensor::{Tensor, TensorError};
use crate::textio::fmt_f64;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {what}")]
    InvalidConfig { what: String },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("parameter {name} contains a non-finite value")]
    NonFiniteParam { name: String },
    #[error("input has {got} columns, model expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("checkpoint version {got}, this build reads {CHECKPOINT_VERSION}")]
    CheckpointVersion { got: u32 },
    #[error("malformed checkpoint: {what}")]
    BadCheckpoint { what: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// Contrastive branch reads normalized projections, predictor reads
    /// unnormalized projections.
    Standard,
    /// Contrastive branch reads normalized encoder output instead.
    BeforeProj,
    /// No projection layer at all; both branches read the encoder output.
    NoProj,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Hidden widths; empty means the encoder is the identity.
    pub encoder_layers: Vec<usize>,
    pub activation: Activation,
    pub proj_dim: usize,
    pub head_mode: HeadMode,
    pub seed: u64,
    /// Study toggle: feed the predictor normalized embeddings instead of raw Z.
    #[serde(default)]
    pub predictor_on_normalized: bool,
}

impl ModelConfig {
    pub fn new(
        input_dim: usize,
        encoder_layers: Vec<usize>,
        activation: Activation,
        proj_dim: usize,
        head_mode: HeadMode,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let cfg = Self {
            input_dim,
            encoder_layers,
            activation,
            proj_dim,
            head_mode,
            seed,
            predictor_on_normalized: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Desk-scale default: two hidden layers of 64, relu, 16-dim projection.
    pub fn desk(input_dim: usize, seed: u64) -> Self {
        Self::new(
            input_dim,
            vec![64, 64],
            Activation::Relu,
            16,
            HeadMode::Standard,
            seed,
        )
        .expect("desk defaults are valid")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 {
            return Err(ModelError::InvalidConfig {
                what: "input_dim must be >= 1".into(),
            });
        }
        if self.encoder_layers.iter().any(|&w| w == 0) {
            return Err(ModelError::InvalidConfig {
                what: "encoder widths must all be >= 1".into(),
            });
        }
        if self.proj_dim < 2 {
            return Err(ModelError::InvalidConfig {
                what: format!("proj_dim must be >= 2, got {}", self.proj_dim),
            });
        }
        Ok(())
    }

    /// Width of the encoder output.
    pub fn encoder_out(&self) -> usize {
        self.encoder_layers.last().copied().unwrap_or(self.input_dim)
    }

    /// Width of Z, the predictor input space.
    pub fn z_dim(&self) -> usize {
        match self.head_mode {
            HeadMode::NoProj => self.encoder_out(),
            _ => self.proj_dim,
        }
    }

    fn has_projection(&self) -> bool {
        self.head_mode != HeadMode::NoProj
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// [in x out], applied as x · W.
    pub weight: Tensor,
    /// [out], broadcast over rows.
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<Layer>,
    pub proj: Option<Layer>,
    /// [z_dim x 1], no bias.
    pub predictor: Tensor,
}

/// Half-width of the uniform initialization interval for a given fan-in.
pub fn init_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Draw weights uniform in ±sqrt(6/fan_in), biases zero. The draw order is
/// fixed (encoder layers in order, projection, predictor; row-major within
/// each weight), so a seed pins every parameter.
pub fn init_params(cfg: &ModelConfig) -> Result<ModelParams, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut draw = |fan_in: usize, fan_out: usize| -> Tensor {
        let dist = Uniform::new_inclusive(-init_bound(fan_in), init_bound(fan_in));
        let values = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
        Tensor::new([fan_in, fan_out], values).expect("weight shape")
    };

    let mut encoder = Vec::with_capacity(cfg.encoder_layers.len());
    let mut width = cfg.input_dim;
    for &next in &cfg.encoder_layers {
        encoder.push(Layer {
            weight: draw(width, next),
            bias: Tensor::zeros([next]),
        });
        width = next;
    }
    let proj = cfg.has_projection().then(|| Layer {
        weight: draw(width, cfg.proj_dim),
        bias: Tensor::zeros([cfg.proj_dim]),
    });
    let predictor = draw(cfg.z_dim(), 1);
    Ok(ModelParams {
        encoder,
        proj,
        predictor,
    })
}

impl ModelParams {
    /// Every parameter tensor, in the fixed order shared with
    /// [`ModelParams::leaves`] and the checkpoint format.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.encoder {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        if let Some(p) = &self.proj {
            out.push(&p.weight);
            out.push(&p.bias);
        }
        out.push(&self.predictor);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.encoder {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        if let Some(p) = &mut self.proj {
            out.push(&mut p.weight);
            out.push(&mut p.bias);
        }
        out.push(&mut self.predictor);
        out
    }

    /// Parameter names in the same fixed order as [`ModelParams::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.encoder.len() {
            out.push(format!("encoder.{i}.weight"));
            out.push(format!("encoder.{i}.bias"));
        }
        if self.proj.is_some() {
            out.push("projection.weight".into());
            out.push("projection.bias".into());
        }
        out.push("predictor.weight".into());
        out
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Insert every parameter as a graph leaf, in [`ModelParams::tensors`] order.
    pub fn leaves(&self, g: &mut Graph) -> ParamNodes {
        let encoder = self
            .encoder
            .iter()
            .map(|l| (g.leaf(l.weight.clone()), g.leaf(l.bias.clone())))
            .collect();
        let proj = self
            .proj
            .as_ref()
            .map(|l| (g.leaf(l.weight.clone()), g.leaf(l.bias.clone())));
        let predictor = g.leaf(self.predictor.clone());
        ParamNodes {
            encoder,
            proj,
            predictor,
        }
    }
}

/// Graph leaf ids for one set of parameters.
pub struct ParamNodes {
    pub encoder: Vec<(NodeId, NodeId)>,
    pub proj: Option<(NodeId, NodeId)>,
    pub predictor: NodeId,
}

impl ParamNodes {
    /// Leaf ids in the same order as [`ModelParams::tensors`].
    pub fn ids(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for &(w, b) in &self.encoder {
            out.push(w);
            out.push(b);
        }
        if let Some((w, b)) = self.proj {
            out.push(w);
            out.push(b);
        }
        out.push(self.predictor);
        out
    }
}

/// The four taps of one forward pass.
pub struct ForwardNodes {
    pub e: NodeId,
    pub z: NodeId,
    pub z_tilde: NodeId,
    pub y_hat: NodeId,
}

fn activation_kind(a: Activation) -> MapKind {
    match a {
        Activation::Relu => MapKind::Relu,
        Activation::Tanh => MapKind::Tanh,
    }
}

/// Encoder alone: affine layers with the configured activation.
pub fn encode_graph(
    g: &mut Graph,
    params: &ParamNodes,
    x: NodeId,
    cfg: &ModelConfig,
) -> Result<NodeId, GraphError> {
    let mut h = x;
    for &(w, b) in &params.encoder {
        let affine = g.matmul(h, w)?;
        let shifted = g.add(affine, b)?;
        h = g.map(activation_kind(cfg.activation), shifted)?;
    }
    Ok(h)
}

/// Projection, normalization, and predictor on top of an encoder output.
/// Splitting here lets a caller freeze the encoder by feeding `e` as a
/// constant leaf.
pub fn head_graph(
    g: &mut Graph,
    params: &ParamNodes,
    e: NodeId,
    cfg: &ModelConfig,
) -> Result<ForwardNodes, GraphError> {
    let z = match params.proj {
        Some((w, b)) => {
            let affine = g.matmul(e, w)?;
            g.add(affine, b)?
        }
        None => e,
    };
    let contrastive_src = match cfg.head_mode {
        HeadMode::Standard => z,
        HeadMode::BeforeProj | HeadMode::NoProj => e,
    };
    let z_tilde = g.rowwise_l2_normalize(contrastive_src)?;
    let pred_in = if cfg.predictor_on_normalized { z_tilde } else { z };
    let y_col = g.matmul(pred_in, params.predictor)?;
    let n = g.value(y_col).rows();
    let y_hat = g.reshape(y_col, &[n])?;
    Ok(ForwardNodes {
        e,
        z,
        z_tilde,
        y_hat,
    })
}

/// Full differentiable forward pass.
pub fn forward_graph(
    g: &mut Graph,
    params: &ParamNodes,
    x: NodeId,
    cfg: &ModelConfig,
) -> Result<ForwardNodes, GraphError> {
    let e = encode_graph(g, params, x, cfg)?;
    head_graph(g, params, e, cfg)
}

/// Value tensors of one forward pass plus the count of embedding rows that
/// hit the normalization floor.
pub struct ForwardOutputs {
    pub e: Tensor,
    pub z: Tensor,
    pub z_tilde: Tensor,
    pub y_hat: Tensor,
    pub degenerate_rows: u64,
}

/// Forward pass on plain tensors, no gradients retained.
pub fn forward(
    params: &ModelParams,
    x: &Tensor,
    cfg: &ModelConfig,
) -> Result<ForwardOutputs, ModelError> {
    if !x.all_finite() {
        return Err(ModelError::NonFiniteInput);
    }
    if x.cols() != cfg.input_dim {
        return Err(ModelError::InputWidth {
            expected: cfg.input_dim,
            got: x.cols(),
        });
    }
    let mut g = Graph::new();
    let nodes = params.leaves(&mut g);
    let xid = g.leaf(x.clone());
    let f = forward_graph(&mut g, &nodes, xid, cfg)?;
    Ok(ForwardOutputs {
        e: g.value(f.e).clone(),
        z: g.value(f.z).clone(),
        z_tilde: g.value(f.z_tilde).clone(),
        y_hat: g.value(f.y_hat).clone(),
        degenerate_rows: g.degenerate_rows(),
    })
}

// ── checkpoints ──────────────────────────────────────────────────────────

#[derive(Deserialize)]
struct CheckpointFile {
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

#[derive(Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Write config and parameters as JSON. Floats are encoded with 17
/// significant digits so a load returns bit-identical tensors.
pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<(), ModelError> {
    let names = params.names();
    let tensors = params.tensors();
    for (name, t) in names.iter().zip(&tensors) {
        if !t.all_finite() {
            return Err(ModelError::NonFiniteParam { name: name.clone() });
        }
    }
    let mut out = String::new();
    out.push_str("{\n  \"version\": ");
    let _ = write!(out, "{CHECKPOINT_VERSION}");
    out.push_str(",\n  \"config\": ");
    out.push_str(&serde_json::to_string(cfg)?);
    out.push_str(",\n  \"tensors\": [\n");
    for (i, (name, t)) in names.iter().zip(&tensors).enumerate() {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let values: Vec<String> = t.values().iter().map(|&v| fmt_f64(v)).collect();
        let _ = write!(
            out,
            "    {{\"name\": \"{name}\", \"shape\": [{}], \"values\": [{}]}}",
            shape.join(", "),
            values.join(", ")
        );
        out.push_str(if i + 1 < tensors.len() { ",\n" } else { "\n" });
    }
    out.push_str("  ]\n}\n");
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a checkpoint and validate names and shapes against its config.
pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams), ModelError> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(ModelError::CheckpointVersion { got: file.version });
    }
    let cfg = file.config;
    cfg.validate()?;

    let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
    let mut width = cfg.input_dim;
    for (i, &next) in cfg.encoder_layers.iter().enumerate() {
        expected.push((format!("encoder.{i}.weight"), vec![width, next]));
        expected.push((format!("encoder.{i}.bias"), vec![next]));
        width = next;
    }
    if cfg.has_projection() {
        expected.push(("projection.weight".into(), vec![width, cfg.proj_dim]));
        expected.push(("projection.bias".into(), vec![cfg.proj_dim]));
    }
    expected.push(("predictor.weight".into(), vec![cfg.z_dim(), 1]));

    if file.tensors.len() != expected.len() {
        return Err(ModelError::BadCheckpoint {
            what: format!(
                "expected {} tensors, found {}",
                expected.len(),
                file.tensors.len()
            ),
        });
    }
    let mut loaded = Vec::with_capacity(expected.len());
    for (rec, (name, shape)) in file.tensors.into_iter().zip(&expected) {
        if &rec.name != name {
            return Err(ModelError::BadCheckpoint {
                what: format!("tensor '{}' where '{name}' was expected", rec.name),
            });
        }
        if &rec.shape != shape {
            return Err(ModelError::BadCheckpoint {
                what: format!(
                    "tensor '{name}' has shape {:?}, config implies {shape:?}",
                    rec.shape
                ),
            });
        }
        loaded.push(Tensor::new(rec.shape, rec.values)?);
    }

    let mut it = loaded.into_iter();
    let mut encoder = Vec::with_capacity(cfg.encoder_layers.len());
    for _ in 0..cfg.encoder_layers.len() {
        let weight = it.next().expect("counted above");
        let bias = it.next().expect("counted above");
        encoder.push(Layer { weight, bias });
    }
    let proj = cfg.has_projection().then(|| {
        let weight = it.next().expect("counted above");
        let bias = it.next().expect("counted above");
        Layer { weight, bias }
    });
    let predictor = it.next().expect("counted above");
    Ok((
        cfg,
        ModelParams {
            encoder,
            proj,
            predictor,
        },
    ))
}
