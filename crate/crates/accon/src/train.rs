//! Training loops: Adam, the two-view contrastive epoch loop, a two-stage
//! variant that freezes the encoder, and a free-embedding mode that optimizes
//! raw unit vectors to expose the loss's geometric fixed point.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::data::{augment_two_views, AugmentSpec, DataError, LabeledDataset};
use crate::geometry::{ideal_angle, GeometryError, LabelRange};
use crate::graph::{Graph, GraphError};
use crate::losses::{
    accon_batch_loss, combined_loss, reference, regression_loss, LossConfig, LossError,
};
use crate::metrics::{compute_metrics, MetricReport, MetricsError, DEFAULT_EPS_GM};
use crate::model::{forward, forward_graph, init_params, ModelConfig, ModelError, ModelParams};
use crate::pairing::{build_pair_sets, PairSets, PairingError};
use crate::seeding::{stream_rng, sub_seed};
use crate::tensor::{Tensor, TensorError};
use crate::textio::fmt_f64;

/// Initial learning rate.
pub const DEFAULT_LR0: f64 = 2.5e-4;

/// Learning rate from epoch 61 onward.
pub const DEFAULT_LR_AFTER_60: f64 = 1e-4;

/// Last epoch that still uses the initial learning rate.
pub const LR_DROP_EPOCH: usize = 60;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {what}")]
    BadConfig { what: String },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("validation set needs at least 2 samples, got {got}")]
    TooSmallValidation { got: usize },
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} \
         (regression {reg}, contrastive {accon}); training aborted"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        reg: f64,
        accon: f64,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Joint,
    TwoStage,
    FreeEmbedding,
}

/// Everything the epoch loop needs beyond the model and the data.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Samples per minibatch before the two views double the row count.
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_after_60: f64,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    /// Additive noise scale for the two augmented views.
    pub sigma_aug: f64,
    /// Per-feature dropout probability for the two augmented views.
    pub dropout_p: f64,
    pub seed: u64,
    pub mode: TrainMode,
    /// Contrastive-only epochs when `mode` is two-stage.
    pub stage1_epochs: usize,
}

impl TrainConfig {
    /// Desk-scale defaults around a given loss configuration.
    pub fn desk(loss: LossConfig, seed: u64) -> Self {
        Self {
            epochs: 80,
            batch_size: 64,
            lr0: DEFAULT_LR0,
            lr_after_60: DEFAULT_LR_AFTER_60,
            adam: AdamConfig::default(),
            loss,
            sigma_aug: 0.05,
            dropout_p: 0.1,
            seed,
            mode: TrainMode::Joint,
            stage1_epochs: 40,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what: &str| {
            Err(TrainError::BadConfig {
                what: what.to_string(),
            })
        };
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return bad("lr0 must be finite and > 0");
        }
        if !(self.lr_after_60.is_finite() && self.lr_after_60 > 0.0) {
            return bad("lr_after_60 must be finite and > 0");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(a.eps.is_finite() && a.eps > 0.0) {
            return bad("adam eps must be finite and > 0");
        }
        if !(self.sigma_aug.is_finite() && self.sigma_aug >= 0.0) {
            return bad("sigma_aug must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if self.mode == TrainMode::TwoStage && self.stage1_epochs > self.epochs {
            return bad("stage1_epochs must not exceed epochs");
        }
        Ok(())
    }
}

/// lr0 through [`LR_DROP_EPOCH`], lr_after_60 from the epoch after it.
/// Epochs are 1-based.
pub fn lr_for_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    if epoch <= LR_DROP_EPOCH {
        cfg.lr0
    } else {
        cfg.lr_after_60
    }
}

/// First and second moment estimates, one pair of buffers per parameter
/// tensor, plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn for_tensors(sizes: &[usize]) -> Self {
        Self {
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn for_params(params: &ModelParams) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self::for_tensors(&sizes)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update across all parameter tensors.
pub fn adam_step(
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
    params: &mut [&mut Tensor],
    grads: &[&[f64]],
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::BadConfig {
            what: format!(
                "optimizer saw {} tensors, {} gradients, state for {}",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for ((tensor, grad), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if tensor.len() != grad.len() {
            return Err(TrainError::BadConfig {
                what: format!(
                    "gradient length {} does not match parameter length {}",
                    grad.len(),
                    tensor.len()
                ),
            });
        }
        for (i, p) in tensor.values_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// One epoch's training losses and validation metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// loss_reg + gamma * loss_accon, by construction.
    pub loss_total: f64,
    pub loss_reg: f64,
    pub loss_accon: f64,
    pub val_mae: f64,
    pub val_mse: f64,
    pub val_gm: f64,
    pub val_r2: f64,
    pub wall_ms: u64,
}

impl EpochRecord {
    /// All fields except wall time, for determinism comparisons.
    pub fn numbers(&self) -> (usize, f64, f64, f64, f64, f64, f64, f64, f64) {
        (
            self.epoch,
            self.lr,
            self.loss_total,
            self.loss_reg,
            self.loss_accon,
            self.val_mae,
            self.val_mse,
            self.val_gm,
            self.val_r2,
        )
    }
}

/// Final parameters plus the lowest-validation-MAE snapshot along the way.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub final_params: ModelParams,
    pub best_params: ModelParams,
    /// 1-based epoch of `best_params`.
    pub best_epoch: usize,
    pub records: Vec<EpochRecord>,
}

/// Knobs for [`fit_two_stage_with`]; the plain entry point freezes stage 2.
#[derive(Clone, Copy, Debug)]
pub struct TwoStageOptions {
    pub stage1_epochs: usize,
    /// When set, stage 2 holds encoder and projection fixed and fits only the
    /// predictor; when clear, stage 2 is the ordinary joint loop.
    pub freeze_stage2: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Objective {
    /// reg + gamma * contrastive, all parameters.
    Combined,
    /// Contrastive term only, all parameters (stage 1).
    ContrastiveOnly,
    /// Regression on frozen embeddings, predictor only (stage 2).
    PredictorOnly,
}

struct BestCheckpoint {
    mae: f64,
    epoch: usize,
    params: ModelParams,
}

struct Trainer<'a> {
    model_cfg: &'a ModelConfig,
    cfg: &'a TrainConfig,
    train: &'a LabeledDataset,
    val: &'a LabeledDataset,
}

impl Trainer<'_> {
    fn check_inputs(&self) -> Result<(), TrainError> {
        self.cfg.validate()?;
        self.model_cfg.validate()?;
        if self.train.len() == 0 {
            return Err(TrainError::EmptyTrainingSet);
        }
        if self.val.len() < 2 {
            return Err(TrainError::TooSmallValidation {
                got: self.val.len(),
            });
        }
        if self.train.features.cols() != self.model_cfg.input_dim {
            return Err(TrainError::BadConfig {
                what: format!(
                    "model expects {} input features, dataset has {}",
                    self.model_cfg.input_dim,
                    self.train.features.cols()
                ),
            });
        }
        Ok(())
    }

    fn run_epochs(
        &self,
        objective: Objective,
        epochs: RangeInclusive<usize>,
        params: &mut ModelParams,
        adam: &mut AdamState,
        records: &mut Vec<EpochRecord>,
        best: &mut BestCheckpoint,
    ) -> Result<(), TrainError> {
        let n = self.train.len();
        for epoch in epochs {
            let started = Instant::now();
            let lr = lr_for_epoch(self.cfg, epoch);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut stream_rng(
                self.cfg.seed,
                &format!("order-epoch-{epoch}"),
            ));
            let mut sum_reg = 0.0;
            let mut sum_accon = 0.0;
            let mut batches = 0usize;
            for (batch, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
                let slice = self.train.select(chunk);
                let aug = AugmentSpec::new(
                    self.cfg.sigma_aug,
                    self.cfg.dropout_p,
                    sub_seed(
                        self.cfg.seed,
                        &format!("augment-epoch-{epoch}-batch-{batch}"),
                    ),
                )?;
                let x2 = augment_two_views(&slice.features, &aug)?;
                let mut y2 = slice.labels.clone();
                y2.extend_from_slice(&slice.labels);
                let (reg_v, accon_v) = match objective {
                    Objective::PredictorOnly => self.frozen_step(params, adam, lr, x2, &y2)?,
                    _ => self.graph_step(objective, params, adam, lr, x2, &y2)?,
                };
                if !(reg_v.is_finite() && accon_v.is_finite()) {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch,
                        reg: reg_v,
                        accon: accon_v,
                    });
                }
                sum_reg += reg_v;
                sum_accon += accon_v;
                batches += 1;
            }
            let loss_reg = sum_reg / batches as f64;
            let loss_accon = sum_accon / batches as f64;
            let loss_total = loss_reg + self.cfg.loss.gamma * loss_accon;
            let val = self.validation_metrics(params)?;
            if val.mae < best.mae {
                best.mae = val.mae;
                best.epoch = epoch;
                best.params = params.clone();
            }
            records.push(EpochRecord {
                epoch,
                lr,
                loss_total,
                loss_reg,
                loss_accon,
                val_mae: val.mae,
                val_mse: val.mse,
                val_gm: val.gm,
                val_r2: val.r2,
                wall_ms: started.elapsed().as_millis() as u64,
            });
        }
        Ok(())
    }

    /// Differentiable minibatch step used by the joint objective and by the
    /// contrastive-only stage. Returns the two component losses; the caller
    /// decides whether they are finite enough to continue.
    fn graph_step(
        &self,
        objective: Objective,
        params: &mut ModelParams,
        adam: &mut AdamState,
        lr: f64,
        x2: Tensor,
        y2: &[f64],
    ) -> Result<(f64, f64), TrainError> {
        let cfg = self.cfg;
        let mut g = Graph::new();
        let nodes = params.leaves(&mut g);
        let x_id = g.leaf(x2);
        let fwd = forward_graph(&mut g, &nodes, x_id, self.model_cfg)?;
        let y_id = g.leaf(Tensor::new(vec![y2.len()], y2.to_vec())?);
        let reg = regression_loss(&mut g, fwd.y_hat, y_id, cfg.loss.reg)?;
        let pairs = build_pair_sets(y2, &cfg.loss.bin)?;
        let range = *cfg.loss.bin.range();
        let accon = accon_batch_loss(&mut g, fwd.z_tilde, y2, &pairs, &cfg.loss, &range)?;
        let reg_v = g.value(reg).item();
        let accon_v = g.value(accon).item();
        if !(reg_v.is_finite() && accon_v.is_finite()) {
            return Ok((reg_v, accon_v));
        }
        let target = match objective {
            Objective::Combined => combined_loss(&mut g, reg, accon, cfg.loss.gamma)?,
            Objective::ContrastiveOnly => accon,
            Objective::PredictorOnly => unreachable!("frozen steps bypass the full graph"),
        };
        g.backward(target)?;
        let ids = nodes.ids();
        let grads: Vec<Vec<f64>> = ids
            .iter()
            .map(|&id| match g.grad(id) {
                Some(grad) => grad.to_vec(),
                None => vec![0.0; g.value(id).len()],
            })
            .collect();
        let grad_slices: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        let mut tensors = params.tensors_mut();
        adam_step(adam, &cfg.adam, lr, &mut tensors, &grad_slices)?;
        Ok((reg_v, accon_v))
    }

    /// Stage-2 step: embeddings are computed outside the graph and enter as
    /// constants, so frozen parameters receive no gradient at all; only the
    /// predictor is updated. The contrastive term is still evaluated (by the
    /// scalar route) so epoch records stay comparable across stages.
    fn frozen_step(
        &self,
        params: &mut ModelParams,
        adam: &mut AdamState,
        lr: f64,
        x2: Tensor,
        y2: &[f64],
    ) -> Result<(f64, f64), TrainError> {
        let cfg = self.cfg;
        let out = forward(params, &x2, self.model_cfg)?;
        let pairs = build_pair_sets(y2, &cfg.loss.bin)?;
        let range = *cfg.loss.bin.range();
        let accon_v = reference::accon_batch(&out.z_tilde, y2, &pairs, &cfg.loss, &range)?;

        let pred_in = if self.model_cfg.predictor_on_normalized {
            out.z_tilde
        } else {
            out.z
        };
        let mut g = Graph::new();
        let z_id = g.leaf(pred_in);
        let w_id = g.leaf(params.predictor.clone());
        let y_col = g.matmul(z_id, w_id)?;
        let y_hat = g.reshape(y_col, &[y2.len()])?;
        let y_id = g.leaf(Tensor::new(vec![y2.len()], y2.to_vec())?);
        let reg = regression_loss(&mut g, y_hat, y_id, cfg.loss.reg)?;
        let reg_v = g.value(reg).item();
        if !reg_v.is_finite() {
            return Ok((reg_v, accon_v));
        }
        g.backward(reg)?;
        let grad = match g.grad(w_id) {
            Some(grad) => grad.to_vec(),
            None => vec![0.0; params.predictor.len()],
        };
        adam_step(
            adam,
            &cfg.adam,
            lr,
            &mut [&mut params.predictor],
            &[&grad],
        )?;
        Ok((reg_v, accon_v))
    }

    fn validation_metrics(&self, params: &ModelParams) -> Result<MetricReport, TrainError> {
        let out = forward(params, &self.val.features, self.model_cfg)?;
        Ok(compute_metrics(
            out.y_hat.values(),
            &self.val.labels,
            DEFAULT_EPS_GM,
        )?)
    }
}

/// Joint training: per minibatch, two augmented views are stacked, labels are
/// duplicated, and one Adam step is taken on reg + gamma * contrastive.
/// Returns the final parameters, the lowest-validation-MAE snapshot, and one
/// record per epoch.
pub fn fit(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train: &LabeledDataset,
    val: &LabeledDataset,
) -> Result<FitResult, TrainError> {
    let trainer = Trainer {
        model_cfg,
        cfg,
        train,
        val,
    };
    trainer.check_inputs()?;
    let mut params = init_params(model_cfg)?;
    let mut adam = AdamState::for_params(&params);
    let mut best = BestCheckpoint {
        mae: f64::INFINITY,
        epoch: 0,
        params: params.clone(),
    };
    let mut records = Vec::with_capacity(cfg.epochs);
    trainer.run_epochs(
        Objective::Combined,
        1..=cfg.epochs,
        &mut params,
        &mut adam,
        &mut records,
        &mut best,
    )?;
    Ok(FitResult {
        final_params: params,
        best_params: best.params,
        best_epoch: best.epoch,
        records,
    })
}

/// Two-stage training with the conventional freeze: stage 1 optimizes the
/// contrastive loss alone, stage 2 fits the predictor on frozen embeddings.
pub fn fit_two_stage(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train: &LabeledDataset,
    val: &LabeledDataset,
) -> Result<FitResult, TrainError> {
    fit_two_stage_with(
        model_cfg,
        cfg,
        train,
        val,
        TwoStageOptions {
            stage1_epochs: cfg.stage1_epochs,
            freeze_stage2: true,
        },
    )
}

/// Two-stage training with explicit stage split and freeze toggle. With zero
/// stage-1 epochs and the freeze disabled this is exactly the joint loop:
/// epoch numbering, batch order, and augmentation streams all line up.
pub fn fit_two_stage_with(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train: &LabeledDataset,
    val: &LabeledDataset,
    opts: TwoStageOptions,
) -> Result<FitResult, TrainError> {
    let trainer = Trainer {
        model_cfg,
        cfg,
        train,
        val,
    };
    trainer.check_inputs()?;
    if opts.stage1_epochs > cfg.epochs {
        return Err(TrainError::BadConfig {
            what: "stage1_epochs must not exceed epochs".into(),
        });
    }
    let mut params = init_params(model_cfg)?;
    let mut best = BestCheckpoint {
        mae: f64::INFINITY,
        epoch: 0,
        params: params.clone(),
    };
    let mut records = Vec::with_capacity(cfg.epochs);
    if opts.stage1_epochs >= 1 {
        let mut adam = AdamState::for_params(&params);
        trainer.run_epochs(
            Objective::ContrastiveOnly,
            1..=opts.stage1_epochs,
            &mut params,
            &mut adam,
            &mut records,
            &mut best,
        )?;
    }
    if opts.stage1_epochs < cfg.epochs {
        let stage2 = (opts.stage1_epochs + 1)..=cfg.epochs;
        if opts.freeze_stage2 {
            let mut adam = AdamState::for_tensors(&[params.predictor.len()]);
            trainer.run_epochs(
                Objective::PredictorOnly,
                stage2,
                &mut params,
                &mut adam,
                &mut records,
                &mut best,
            )?;
        } else {
            let mut adam = AdamState::for_params(&params);
            trainer.run_epochs(
                Objective::Combined,
                stage2,
                &mut params,
                &mut adam,
                &mut records,
                &mut best,
            )?;
        }
    }
    Ok(FitResult {
        final_params: params,
        best_params: best.params,
        best_epoch: best.epoch,
        records,
    })
}

/// Trace of the encoder-free optimization.
#[derive(Clone, Debug)]
pub struct FreeEmbeddingResult {
    /// [2N x d] final unit vectors, the two views stacked label-first.
    pub embeddings: Tensor,
    /// Contrastive loss per step.
    pub loss: Vec<f64>,
    /// Mean |acos(z_i . z_m) - |target angle|| over anchor/negative pairs,
    /// per step.
    pub alignment: Vec<f64>,
}

/// Optimize 2N raw embedding vectors (two views per label, re-normalized
/// after every step) against the contrastive loss alone. Isolates the
/// geometry the loss drives toward, with no encoder in the way.
pub fn fit_free_embeddings(
    labels: &[f64],
    d: usize,
    cfg: &TrainConfig,
) -> Result<FreeEmbeddingResult, TrainError> {
    cfg.validate()?;
    if labels.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if d == 0 {
        return Err(TrainError::BadConfig {
            what: "embedding dimension must be >= 1".into(),
        });
    }
    let mut y2 = labels.to_vec();
    y2.extend_from_slice(labels);
    let pairs = build_pair_sets(&y2, &cfg.loss.bin)?;
    let range = *cfg.loss.bin.range();
    let n2 = y2.len();

    let mut rng = stream_rng(cfg.seed, "free-init");
    let mut z = Tensor::zeros(vec![n2, d]);
    for value in z.values_mut() {
        *value = StandardNormal.sample(&mut rng);
    }
    normalize_rows(&mut z);

    let mut adam = AdamState::for_tensors(&[n2 * d]);
    let mut loss = Vec::with_capacity(cfg.epochs);
    let mut alignment = Vec::with_capacity(cfg.epochs);
    for step in 1..=cfg.epochs {
        let lr = lr_for_epoch(cfg, step);
        let mut g = Graph::new();
        let z_id = g.leaf(z.clone());
        let z_tilde = g.rowwise_l2_normalize(z_id)?;
        let accon = accon_batch_loss(&mut g, z_tilde, &y2, &pairs, &cfg.loss, &range)?;
        let accon_v = g.value(accon).item();
        if !accon_v.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch: step,
                batch: 0,
                reg: 0.0,
                accon: accon_v,
            });
        }
        g.backward(accon)?;
        let grad = match g.grad(z_id) {
            Some(grad) => grad.to_vec(),
            None => vec![0.0; n2 * d],
        };
        adam_step(&mut adam, &cfg.adam, lr, &mut [&mut z], &[&grad])?;
        normalize_rows(&mut z);
        loss.push(accon_v);
        alignment.push(alignment_error(&z, &y2, &pairs, &range)?);
    }
    Ok(FreeEmbeddingResult {
        embeddings: z,
        loss,
        alignment,
    })
}

fn normalize_rows(z: &mut Tensor) {
    let (n, d) = (z.rows(), z.cols());
    let values = z.values_mut();
    for row in 0..n {
        let slice = &mut values[row * d..(row + 1) * d];
        let norm = slice.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in slice.iter_mut() {
                *v /= norm;
            }
        }
    }
}

/// Mean absolute gap between realized anchor/negative angles and their
/// label-distance targets.
fn alignment_error(
    z: &Tensor,
    labels: &[f64],
    pairs: &PairSets,
    range: &LabelRange,
) -> Result<f64, TrainError> {
    let d = z.cols();
    let values = z.values();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, negatives) in pairs.negatives.iter().enumerate() {
        for &m in negatives {
            let dot: f64 = values[i * d..(i + 1) * d]
                .iter()
                .zip(&values[m * d..(m + 1) * d])
                .map(|(a, b)| a * b)
                .sum();
            let angle = dot.clamp(-1.0, 1.0).acos();
            let target = ideal_angle(labels[i], labels[m], range)?.abs();
            sum += (angle - target).abs();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Write one epoch per line with the pinned column set.
pub fn write_epoch_log(path: &Path, records: &[EpochRecord]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "epoch,lr,loss_total,loss_reg,loss_accon,val_mae,val_mse,val_gm,val_r2,wall_ms"
    )?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            fmt_f64(r.lr),
            fmt_f64(r.loss_total),
            fmt_f64(r.loss_reg),
            fmt_f64(r.loss_accon),
            fmt_f64(r.val_mae),
            fmt_f64(r.val_mse),
            fmt_f64(r.val_gm),
            fmt_f64(r.val_r2),
            r.wall_ms
        )?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, split, DatasetSpec, LabelDist, SplitFractions, SplitMode};
    use crate::losses::RegressionKind;
    use crate::model::{Activation, HeadMode};
    use crate::pairing::{BinConfig, BinMode};
    use rand::Rng;

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!(
            (a - b).abs() <= tol,
            "{what}: {a} vs {b} (|diff| = {})",
            (a - b).abs()
        );
    }

    #[test]
    fn adam_first_step_from_zero_state_has_closed_form() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.values().to_vec();
        let grad = [0.3, -0.7, 0.0];
        let mut state = AdamState::for_tensors(&[3]);
        let lr = 0.01;
        adam_step(&mut state, &cfg, lr, &mut [&mut p], &[&grad]).unwrap();
        for i in 0..3 {
            let expected = before[i] - lr * grad[i] / (grad[i].abs() + cfg.eps);
            assert_close(p.values()[i], expected, 1e-15, "first-step coordinate");
        }
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_leaves_parameters_alone_on_zero_gradient() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::new(vec![2], vec![4.0, -1.0]).unwrap();
        let mut state = AdamState::for_tensors(&[2]);
        adam_step(&mut state, &cfg, 0.1, &mut [&mut p], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p.values(), &[4.0, -1.0]);
        assert!(state.m[0].iter().all(|&m| m == 0.0));
        // After a real step, zero gradients decay the moments geometrically.
        adam_step(&mut state, &cfg, 0.1, &mut [&mut p], &[&[1.0, 1.0]]).unwrap();
        let m_before = state.m[0][0];
        let v_before = state.v[0][0];
        adam_step(&mut state, &cfg, 0.1, &mut [&mut p], &[&[0.0, 0.0]]).unwrap();
        assert_close(state.m[0][0], cfg.beta1 * m_before, 1e-15, "m decay");
        assert_close(state.v[0][0], cfg.beta2 * v_before, 1e-15, "v decay");
    }

    #[test]
    fn adam_constant_gradient_steps_approach_the_learning_rate() {
        // With a constant gradient the bias corrections cancel exactly, so
        // every step has magnitude lr * |g| / (|g| + eps).
        let cfg = AdamConfig::default();
        let mut p = Tensor::new(vec![1], vec![0.0]).unwrap();
        let mut state = AdamState::for_tensors(&[1]);
        let lr = 0.01;
        let g = [0.5];
        let mut last = p.values()[0];
        for step in 1..=200 {
            adam_step(&mut state, &cfg, lr, &mut [&mut p], &[&g]).unwrap();
            let delta = (p.values()[0] - last).abs();
            assert_close(delta, lr, 1e-6 * lr, &format!("step {step} magnitude"));
            last = p.values()[0];
        }
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        let mut state = AdamState::for_tensors(&[2]);
        let err = adam_step(&mut state, &cfg, 0.1, &mut [&mut p], &[&[1.0]]).unwrap_err();
        assert!(matches!(err, TrainError::BadConfig { .. }));
    }

    #[test]
    fn learning_rate_schedule_switches_exactly_after_sixty() {
        let cfg = TrainConfig::desk(small_loss_config(), 0);
        assert_eq!(lr_for_epoch(&cfg, 1), cfg.lr0);
        assert_eq!(lr_for_epoch(&cfg, 60), cfg.lr0);
        assert_eq!(lr_for_epoch(&cfg, 61), cfg.lr_after_60);
        assert_eq!(lr_for_epoch(&cfg, 200), cfg.lr_after_60);
    }

    fn small_loss_config() -> LossConfig {
        let range = LabelRange::new(-4.0, 4.0).unwrap();
        LossConfig::defaults(range)
    }

    /// Noiseless linear data: y = x . w_true over x in [-1, 1]^3.
    fn linear_dataset(n: usize, seed: u64) -> LabeledDataset {
        let w_true = [1.0, -2.0, 0.5];
        let mut rng = stream_rng(seed, "linear-data");
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            labels.push(x.iter().zip(&w_true).map(|(a, b)| a * b).sum());
            rows.push(x);
        }
        LabeledDataset {
            ids: (0..n).collect(),
            labels,
            features: Tensor::from_rows(&rows).unwrap(),
        }
    }

    fn identity_model() -> ModelConfig {
        ModelConfig::new(3, vec![], Activation::Relu, 2, HeadMode::NoProj, 7).unwrap()
    }

    #[test]
    fn gamma_zero_mse_recovers_a_noiseless_linear_map() {
        let train = linear_dataset(64, 11);
        let val = linear_dataset(16, 12);
        let mut loss = small_loss_config();
        loss.gamma = 0.0;
        loss.reg = RegressionKind::Mse;
        let mut cfg = TrainConfig::desk(loss, 5);
        cfg.epochs = 250;
        cfg.batch_size = 64;
        cfg.lr0 = 0.05;
        cfg.lr_after_60 = 0.02;
        cfg.sigma_aug = 0.0;
        cfg.dropout_p = 0.0;
        let result = fit(&identity_model(), &cfg, &train, &val).unwrap();
        let last = result.records.last().unwrap();
        assert!(
            last.loss_reg < 1e-3,
            "train MSE stuck at {}",
            last.loss_reg
        );
    }

    fn tiny_cfg(epochs: usize, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::desk(small_loss_config(), seed);
        cfg.epochs = epochs;
        cfg.batch_size = 8;
        cfg.lr0 = 0.01;
        cfg.lr_after_60 = 0.005;
        // The identity encoder feeds raw features to the contrastive head, so
        // full-row dropout would produce zero-norm embeddings.
        cfg.dropout_p = 0.0;
        cfg
    }

    #[test]
    fn repeated_fits_are_bitwise_identical() {
        let train = linear_dataset(24, 3);
        let val = linear_dataset(8, 4);
        let cfg = tiny_cfg(3, 9);
        let model = identity_model();
        let a = fit(&model, &cfg, &train, &val).unwrap();
        let b = fit(&model, &cfg, &train, &val).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.numbers(), rb.numbers());
        }
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(a.best_params, b.best_params);
        assert_eq!(a.best_epoch, b.best_epoch);
    }

    #[test]
    fn single_epoch_single_batch_runs_are_identical() {
        let train = linear_dataset(8, 21);
        let val = linear_dataset(8, 22);
        let mut cfg = tiny_cfg(1, 2);
        cfg.batch_size = 8;
        let model = identity_model();
        let a = fit(&model, &cfg, &train, &val).unwrap();
        let b = fit(&model, &cfg, &train, &val).unwrap();
        assert_eq!(a.records[0].numbers(), b.records[0].numbers());
    }

    #[test]
    fn epoch_records_satisfy_the_total_loss_identity() {
        let train = linear_dataset(24, 31);
        let val = linear_dataset(8, 32);
        let mut cfg = tiny_cfg(4, 1);
        cfg.loss.gamma = 0.7;
        let result = fit(&identity_model(), &cfg, &train, &val).unwrap();
        for r in &result.records {
            assert_close(
                r.loss_total,
                r.loss_reg + cfg.loss.gamma * r.loss_accon,
                1e-9,
                "total-loss identity",
            );
        }
    }

    #[test]
    fn fit_does_not_mutate_the_dataset() {
        let train = linear_dataset(16, 41);
        let val = linear_dataset(8, 42);
        let train_before = train.features.values().to_vec();
        let labels_before = train.labels.clone();
        let cfg = tiny_cfg(2, 3);
        fit(&identity_model(), &cfg, &train, &val).unwrap();
        assert_eq!(train.features.values(), train_before.as_slice());
        assert_eq!(train.labels, labels_before);
    }

    #[test]
    fn best_epoch_points_at_the_lowest_validation_mae() {
        let train = linear_dataset(24, 51);
        let val = linear_dataset(10, 52);
        let cfg = tiny_cfg(5, 6);
        let model = identity_model();
        let result = fit(&model, &cfg, &train, &val).unwrap();
        let min_epoch = result
            .records
            .iter()
            .min_by(|a, b| a.val_mae.total_cmp(&b.val_mae))
            .unwrap()
            .epoch;
        assert_eq!(result.best_epoch, min_epoch);
        // The stored snapshot reproduces that epoch's validation MAE exactly.
        let out = forward(&result.best_params, &val.features, &model).unwrap();
        let report = compute_metrics(out.y_hat.values(), &val.labels, DEFAULT_EPS_GM).unwrap();
        let recorded = result.records[result.best_epoch - 1].val_mae;
        assert_eq!(report.mae, recorded);
    }

    #[test]
    fn non_finite_features_abort_with_the_failing_location() {
        let mut train = linear_dataset(8, 61);
        train.features.values_mut()[0] = f64::INFINITY;
        let val = linear_dataset(8, 62);
        let cfg = tiny_cfg(1, 4);
        let err = fit(&identity_model(), &cfg, &train, &val).unwrap_err();
        match err {
            TrainError::NonFiniteLoss { epoch, .. } => assert_eq!(epoch, 1),
            other => panic!("expected a non-finite loss abort, got {other}"),
        }
    }

    #[test]
    fn configuration_contract_violations_are_rejected() {
        let train = linear_dataset(8, 71);
        let val = linear_dataset(8, 72);
        let model = identity_model();

        let mut cfg = tiny_cfg(0, 5);
        assert!(matches!(
            fit(&model, &cfg, &train, &val),
            Err(TrainError::BadConfig { .. })
        ));
        cfg = tiny_cfg(1, 5);
        cfg.batch_size = 0;
        assert!(matches!(
            fit(&model, &cfg, &train, &val),
            Err(TrainError::BadConfig { .. })
        ));
        cfg = tiny_cfg(1, 5);
        cfg.lr0 = 0.0;
        assert!(matches!(
            fit(&model, &cfg, &train, &val),
            Err(TrainError::BadConfig { .. })
        ));

        let cfg = tiny_cfg(1, 5);
        let one = linear_dataset(1, 73);
        assert!(matches!(
            fit(&model, &cfg, &train, &one),
            Err(TrainError::TooSmallValidation { got: 1 })
        ));

        let wide = ModelConfig::new(5, vec![], Activation::Relu, 2, HeadMode::NoProj, 7).unwrap();
        assert!(matches!(
            fit(&wide, &cfg, &train, &val),
            Err(TrainError::BadConfig { .. })
        ));
    }

    fn imbalanced_dataset(seed: u64) -> (LabeledDataset, LabeledDataset, LabelRange) {
        let range = LabelRange::new(0.0, 50.0).unwrap();
        let spec = DatasetSpec {
            n_samples: 240,
            d_in: 6,
            label_range: range,
            label_dist: LabelDist::Exponential { rate: 0.08 },
            manifold_seed: seed,
            sample_seed: seed.wrapping_add(1),
            noise_sigma: 0.05,
            split: SplitFractions::new(0.8, 0.1, 0.1).unwrap(),
            split_mode: SplitMode::Natural,
            dir_bin_count: 10,
        };
        let data = generate(&spec).unwrap();
        let (train, val, _test) = split(&data, &spec).unwrap();
        (train, val, range)
    }

    fn contrastive_cfg(range: LabelRange, seed: u64, epochs: usize) -> TrainConfig {
        let bin = BinConfig::new(range, BinMode::Count(10)).unwrap();
        let loss = LossConfig::new(
            0.05,
            1.0,
            crate::geometry::SmoothingEps::new(1e-6).unwrap(),
            RegressionKind::Mae,
            bin,
        )
        .unwrap();
        let mut cfg = TrainConfig::desk(loss, seed);
        cfg.epochs = epochs;
        // Full-batch epochs keep the recorded loss on one fixed objective.
        cfg.batch_size = 192;
        cfg.lr0 = 1e-2;
        cfg.lr_after_60 = 1e-2;
        cfg.sigma_aug = 0.02;
        cfg.dropout_p = 0.0;
        cfg
    }

    fn small_encoder_model(seed: u64) -> ModelConfig {
        ModelConfig::new(6, vec![16], Activation::Relu, 8, HeadMode::Standard, seed).unwrap()
    }

    #[test]
    fn contrastive_component_mostly_decreases_early() {
        // Across 5 seeds, the contrastive loss should fall over the first 5
        // epochs in at least 4; recorded per seed, asserted in aggregate.
        let mut improving = 0;
        for seed in 0..5u64 {
            let (train, val, range) = imbalanced_dataset(100 + seed);
            let cfg = contrastive_cfg(range, seed, 5);
            let model = small_encoder_model(seed);
            let result = fit(&model, &cfg, &train, &val).unwrap();
            let accon: Vec<f64> = result.records.iter().map(|r| r.loss_accon).collect();
            if accon.windows(2).all(|w| w[1] < w[0]) {
                improving += 1;
            }
        }
        assert!(
            improving >= 4,
            "contrastive loss decreased in only {improving}/5 seeds"
        );
    }

    #[test]
    fn frozen_stage_two_only_moves_the_predictor() {
        let (train, val, range) = imbalanced_dataset(7);
        let cfg = contrastive_cfg(range, 3, 1);
        let model = small_encoder_model(3);
        let init = init_params(&model).unwrap();
        let result = fit_two_stage_with(
            &model,
            &cfg,
            &train,
            &val,
            TwoStageOptions {
                stage1_epochs: 0,
                freeze_stage2: true,
            },
        )
        .unwrap();
        // Frozen parts keep their exact initial bits: they never saw a gradient.
        assert_eq!(result.final_params.encoder, init.encoder);
        assert_eq!(result.final_params.proj, init.proj);
        assert_ne!(result.final_params.predictor, init.predictor);
    }

    #[test]
    fn two_stage_without_freezing_or_stage_one_is_the_joint_loop() {
        let (train, val, range) = imbalanced_dataset(17);
        let cfg = contrastive_cfg(range, 5, 2);
        let model = small_encoder_model(5);
        let joint = fit(&model, &cfg, &train, &val).unwrap();
        let staged = fit_two_stage_with(
            &model,
            &cfg,
            &train,
            &val,
            TwoStageOptions {
                stage1_epochs: 0,
                freeze_stage2: false,
            },
        )
        .unwrap();
        for (a, b) in joint.records.iter().zip(&staged.records) {
            assert_eq!(a.numbers(), b.numbers());
        }
        assert_eq!(joint.final_params, staged.final_params);
    }

    #[test]
    fn two_stage_trails_joint_training_on_aggregate() {
        // Freezing the encoder after a short contrastive stage should not
        // beat joint training; asserted over seeds in aggregate, not per seed.
        let mut joint_sum = 0.0;
        let mut staged_sum = 0.0;
        for seed in 0..3u64 {
            let (train, val, range) = imbalanced_dataset(300 + seed);
            let mut cfg = contrastive_cfg(range, seed, 8);
            cfg.stage1_epochs = 4;
            let model = small_encoder_model(seed);
            let joint = fit(&model, &cfg, &train, &val).unwrap();
            let staged = fit_two_stage(&model, &cfg, &train, &val).unwrap();
            joint_sum += joint.records.last().unwrap().val_mae;
            staged_sum += staged.records.last().unwrap().val_mae;
        }
        assert!(
            staged_sum >= joint_sum,
            "two-stage ({staged_sum}) unexpectedly beat joint ({joint_sum}) in aggregate"
        );
    }

    fn free_cfg(range: LabelRange, epochs: usize, lr: f64) -> TrainConfig {
        let mut loss = LossConfig::defaults(range);
        // A sharp temperature saturates the softmax long before the vectors
        // reach their target angles; a moderate one keeps gradients alive all
        // the way to the fixed point, which is temperature-independent.
        loss.tau = 0.5;
        let mut cfg = TrainConfig::desk(loss, 13);
        cfg.epochs = epochs;
        cfg.lr0 = lr;
        cfg.lr_after_60 = lr;
        cfg
    }

    #[test]
    fn endpoint_labels_are_driven_to_antipodal_embeddings() {
        let range = LabelRange::new(0.0, 100.0).unwrap();
        let cfg = free_cfg(range, 400, 0.05);
        let result = fit_free_embeddings(&[0.0, 100.0], 2, &cfg).unwrap();
        let z = &result.embeddings;
        let cos: f64 = (0..2).map(|k| z.get(0, k) * z.get(1, k)).sum();
        assert!(
            cos <= -0.99,
            "endpoint embeddings only reached cosine {cos}"
        );
    }

    #[test]
    fn a_single_duplicated_label_sits_still_at_zero_loss() {
        let range = LabelRange::new(0.0, 10.0).unwrap();
        let cfg = free_cfg(range, 20, 0.05);
        let result = fit_free_embeddings(&[7.0], 3, &cfg).unwrap();
        assert!(result.loss.iter().all(|&l| l == 0.0), "loss {:?}", result.loss);
        // Gradient-free steps leave the vectors where they started, up to the
        // per-step renormalization of already-unit rows.
        let mut rng = stream_rng(cfg.seed, "free-init");
        let mut init = Tensor::zeros(vec![2, 3]);
        for value in init.values_mut() {
            *value = StandardNormal.sample(&mut rng);
        }
        normalize_rows(&mut init);
        for (a, b) in result.embeddings.values().iter().zip(init.values()) {
            assert_close(*a, *b, 1e-12, "embedding drift");
        }
    }

    #[test]
    fn equispaced_labels_align_angles_with_label_distances() {
        let range = LabelRange::new(0.0, 100.0).unwrap();
        let cfg = free_cfg(range, 2000, 0.02);
        let labels: Vec<f64> = (0..8).map(|k| k as f64 * 100.0 / 7.0).collect();
        let result = fit_free_embeddings(&labels, 3, &cfg).unwrap();
        let first = result.alignment[0];
        let last = *result.alignment.last().unwrap();
        assert!(
            last < first,
            "alignment error went from {first} to {last} without improving"
        );
    }

    #[test]
    fn free_mode_rejects_empty_and_zero_dimensional_problems() {
        let range = LabelRange::new(0.0, 1.0).unwrap();
        let cfg = free_cfg(range, 5, 0.01);
        assert!(matches!(
            fit_free_embeddings(&[], 2, &cfg),
            Err(TrainError::EmptyTrainingSet)
        ));
        assert!(matches!(
            fit_free_embeddings(&[0.5], 0, &cfg),
            Err(TrainError::BadConfig { .. })
        ));
    }

    #[test]
    fn epoch_log_csv_has_the_pinned_columns() {
        let records = vec![
            EpochRecord {
                epoch: 1,
                lr: 0.01,
                loss_total: 2.5,
                loss_reg: 2.0,
                loss_accon: 0.5,
                val_mae: 1.25,
                val_mse: 3.0,
                val_gm: 0.9,
                val_r2: 0.4,
                wall_ms: 12,
            },
            EpochRecord {
                epoch: 2,
                lr: 0.01,
                loss_total: 2.0,
                loss_reg: 1.6,
                loss_accon: 0.4,
                val_mae: 1.0,
                val_mse: 2.2,
                val_gm: 0.8,
                val_r2: 0.5,
                wall_ms: 11,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("epochs.csv");
        write_epoch_log(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "epoch,lr,loss_total,loss_reg,loss_accon,val_mae,val_mse,val_gm,val_r2,wall_ms"
        );
        assert_eq!(lines.len(), 3);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[0], "1");
        assert_eq!(fields[1], fmt_f64(0.01));
        assert_eq!(fields[9], "12");
        // Every float field round-trips bit-exactly.
        assert_eq!(fields[3].parse::<f64>().unwrap().to_bits(), 2.0f64.to_bits());
    }

    #[test]
    fn lr_drop_lands_in_the_epoch_records() {
        let train = linear_dataset(4, 81);
        let val = linear_dataset(4, 82);
        let mut cfg = tiny_cfg(62, 8);
        cfg.batch_size = 4;
        let result = fit(&identity_model(), &cfg, &train, &val).unwrap();
        assert_eq!(result.records[59].lr, cfg.lr0);
        assert_eq!(result.records[60].lr, cfg.lr_after_60);
        assert_eq!(result.records[61].lr, cfg.lr_after_60);
    }
}
