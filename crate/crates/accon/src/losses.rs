//! The loss family: naive supervised-contrastive, the angle-compensated
//! variant, regression terms, the combined objective, and lower-bound
//! diagnostics.
//!
//! Each contrastive loss exists twice: a vectorized graph route used for
//! training (masked logit matrix, row logsumexp) and a straight-line scalar
//! route in [`reference`] used by the bound diagnostics and as a test oracle.
//! The two share only the scalar geometry functions for constants.

use crate::geometry::{
    compensated_cosine, compensation_angle, GeometryError, LabelRange, SmoothingEps,
};
use crate::graph::{logsumexp, Graph, GraphError, NodeId, MASK_NEG};
use crate::pairing::{BinConfig, PairSets, PairingError};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Temperature default.
pub const DEFAULT_TAU: f64 = 0.05;
/// Contrastive weight default.
pub const DEFAULT_GAMMA: f64 = 1.0;
/// Row norms may drift this far from 1 before the loss refuses the batch.
pub const UNIT_ROW_TOL: f64 = 1e-6;
/// Per-anchor bound margins below this count as violations.
pub const MARGIN_TOL: f64 = -1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("temperature must be finite and > 0, got {tau}")]
    BadTau { tau: f64 },
    #[error("gamma must be finite and >= 0, got {gamma}")]
    BadGamma { gamma: f64 },
    #[error("row {row} has norm {norm}, not unit within {UNIT_ROW_TOL}")]
    NonUnitRow { row: usize, norm: f64 },
    #[error("batch size mismatch: {z_rows} embedding rows, {labels} labels, {pairs} pair sets")]
    BatchMismatch {
        z_rows: usize,
        labels: usize,
        pairs: usize,
    },
    #[error("anchor index {index} out of range for batch of {len}")]
    AnchorOutOfRange { index: usize, len: usize },
    #[error("prediction shape {left:?} does not match target shape {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionKind {
    Mae,
    Mse,
}

/// How negatives enter the denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// As printed: plain positives plus angle-compensated negatives.
    CompensatedNegatives,
    /// Compatibility composition in the naive style: plain cosines for every
    /// non-anchor pair, no compensation.
    PlainNegatives,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub gamma: f64,
    pub eps: SmoothingEps,
    pub reg: RegressionKind,
    pub bin: BinConfig,
    pub denominator: DenominatorMode,
}

impl LossConfig {
    pub fn new(
        tau: f64,
        gamma: f64,
        eps: SmoothingEps,
        reg: RegressionKind,
        bin: BinConfig,
    ) -> Result<Self, LossError> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(LossError::BadTau { tau });
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(LossError::BadGamma { gamma });
        }
        Ok(Self {
            tau,
            gamma,
            eps,
            reg,
            bin,
            denominator: DenominatorMode::CompensatedNegatives,
        })
    }

    /// tau 0.05, gamma 1, default smoothing, MAE, unit-width bins.
    pub fn defaults(range: LabelRange) -> Self {
        Self::new(
            DEFAULT_TAU,
            DEFAULT_GAMMA,
            SmoothingEps::default(),
            RegressionKind::Mae,
            BinConfig::unit_width(range),
        )
        .expect("default loss parameters are valid")
    }

    pub fn with_denominator(mut self, mode: DenominatorMode) -> Self {
        self.denominator = mode;
        self
    }
}

// ── shared contracts ─────────────────────────────────────────────────────

fn check_tau(tau: f64) -> Result<(), LossError> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(LossError::BadTau { tau })
    }
}

fn check_unit_rows(z: &Tensor) -> Result<(), LossError> {
    let (rows, cols) = (z.rows(), z.cols());
    for i in 0..rows {
        let norm = z.values()[i * cols..(i + 1) * cols]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() > UNIT_ROW_TOL {
            return Err(LossError::NonUnitRow { row: i, norm });
        }
    }
    Ok(())
}

fn check_batch(z: &Tensor, labels: &[f64], pairs: &PairSets) -> Result<usize, LossError> {
    let n = z.rows();
    if labels.len() != n || pairs.len() != n {
        return Err(LossError::BatchMismatch {
            z_rows: n,
            labels: labels.len(),
            pairs: pairs.len(),
        });
    }
    Ok(n)
}

// ── constant matrices feeding the graph route ────────────────────────────

fn pos_neg_masks(pairs: &PairSets) -> (Tensor, Tensor) {
    let n = pairs.len();
    let mut pos = vec![0.0; n * n];
    let mut neg = vec![0.0; n * n];
    for i in 0..n {
        for &p in &pairs.positives[i] {
            pos[i * n + p] = 1.0;
        }
        for &m in &pairs.negatives[i] {
            neg[i * n + m] = 1.0;
        }
    }
    (
        Tensor::new([n, n], pos).expect("mask shape"),
        Tensor::new([n, n], neg).expect("mask shape"),
    )
}

fn diag_tensor(n: usize, v: f64) -> Tensor {
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        d[i * n + i] = v;
    }
    Tensor::new([n, n], d).expect("diag shape")
}

fn phi_matrices(labels: &[f64], range: &LabelRange) -> Result<(Tensor, Tensor), LossError> {
    let n = labels.len();
    let mut cos_phi = vec![0.0; n * n];
    let mut abs_sin_phi = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let phi = compensation_angle(labels[i], labels[j], range)?;
            cos_phi[i * n + j] = phi.cos();
            abs_sin_phi[i * n + j] = phi.sin().abs();
        }
    }
    Ok((
        Tensor::new([n, n], cos_phi).expect("phi shape"),
        Tensor::new([n, n], abs_sin_phi).expect("phi shape"),
    ))
}

enum NegStyle<'a> {
    Plain,
    Compensated {
        labels: &'a [f64],
        range: &'a LabelRange,
        eps: f64,
    },
}

enum AnchorWeights {
    /// 1/n per anchor: the batch mean.
    Uniform,
    /// Indicator of one anchor: the per-anchor loss.
    Single(usize),
}

/// Core of both contrastive losses:
/// sum_i w_i * [ logsumexp_k(M_ik) - (1/|P(i)|) sum_p S_ip / tau ]
/// where M carries S/tau on positive slots, the negative similarity (plain or
/// compensated) on negative slots, and an additive -1e30 on the diagonal.
/// Anchors with empty P(i) get weight zero.
fn masked_contrastive_loss(
    g: &mut Graph,
    z: NodeId,
    pairs: &PairSets,
    tau: f64,
    style: NegStyle<'_>,
    weights: AnchorWeights,
) -> Result<NodeId, LossError> {
    let n = pairs.len();
    let zt = g.transpose(z)?;
    let s = g.matmul(z, zt)?;
    let s_tau = g.scale(s, 1.0 / tau)?;

    let (pos_mask, neg_mask) = pos_neg_masks(pairs);
    let pos_mask = g.leaf(pos_mask);
    let neg_mask = g.leaf(neg_mask);
    let diag = g.leaf(diag_tensor(n, MASK_NEG));

    let neg_logits = match style {
        NegStyle::Plain => s_tau,
        NegStyle::Compensated { labels, range, eps } => {
            let (cos_phi, abs_sin_phi) = phi_matrices(labels, range)?;
            let cos_phi = g.leaf(cos_phi);
            let abs_sin_phi = g.leaf(abs_sin_phi);
            let s_sq = g.mul(s, s)?;
            let one_eps = g.constant_scalar(1.0 + eps);
            let gap = g.sub(one_eps, s_sq)?;
            // The diagonal never reaches the loss but sqrt'(0) is singular;
            // shifting it keeps the backward sweep NaN-free at eps = 0.
            let diag_shift = g.leaf(diag_tensor(n, 1.0));
            let gap_safe = g.add(gap, diag_shift)?;
            let root = g.map(crate::graph::MapKind::Sqrt, gap_safe)?;
            let rotated = g.mul(s, cos_phi)?;
            let sin_term = g.mul(abs_sin_phi, root)?;
            let comp = g.sub(rotated, sin_term)?;
            g.scale(comp, 1.0 / tau)?
        }
    };

    let pos_part = g.mul(s_tau, pos_mask)?;
    let neg_part = g.mul(neg_logits, neg_mask)?;
    let combined = g.add(pos_part, neg_part)?;
    let logits = g.add(combined, diag)?;
    let lse = g.logsumexp_rows(logits)?;

    let mut w = vec![0.0; n];
    match weights {
        AnchorWeights::Uniform => {
            for (i, wi) in w.iter_mut().enumerate() {
                if !pairs.positives[i].is_empty() {
                    *wi = 1.0 / n as f64;
                }
            }
        }
        AnchorWeights::Single(i) => {
            w[i] = 1.0;
        }
    }
    let mut pos_w = vec![0.0; n * n];
    for i in 0..n {
        let np = pairs.positives[i].len();
        if np == 0 || w[i] == 0.0 {
            continue;
        }
        for &p in &pairs.positives[i] {
            pos_w[i * n + p] = w[i] / np as f64;
        }
    }
    let w = g.leaf(Tensor::new([n], w).expect("weight shape"));
    let pos_w = g.leaf(Tensor::new([n, n], pos_w).expect("weight shape"));

    let weighted_lse = g.mul(lse, w)?;
    let t_lse = g.sum(weighted_lse)?;
    let weighted_pos = g.mul(s_tau, pos_w)?;
    let t_pos = g.sum(weighted_pos)?;
    Ok(g.sub(t_lse, t_pos)?)
}

// ── public graph-route losses ────────────────────────────────────────────

/// Supervised-contrastive loss with plain cosines everywhere: mean over
/// anchors of -(1/|P(i)|) sum_p log[exp(s_ip/tau) / sum_{k in P∪N} exp(s_ik/tau)].
/// Anchors without positives contribute 0 and still count in the mean.
pub fn naive_supcon_loss(
    g: &mut Graph,
    z: NodeId,
    pairs: &PairSets,
    tau: f64,
) -> Result<NodeId, LossError> {
    check_tau(tau)?;
    let zt = g.value(z).clone();
    check_unit_rows(&zt)?;
    if pairs.len() != zt.rows() {
        return Err(LossError::BatchMismatch {
            z_rows: zt.rows(),
            labels: pairs.len(),
            pairs: pairs.len(),
        });
    }
    masked_contrastive_loss(g, z, pairs, tau, NegStyle::Plain, AnchorWeights::Uniform)
}

fn neg_style<'a>(
    cfg: &LossConfig,
    labels: &'a [f64],
    range: &'a LabelRange,
) -> NegStyle<'a> {
    match cfg.denominator {
        DenominatorMode::CompensatedNegatives => NegStyle::Compensated {
            labels,
            range,
            eps: cfg.eps.get(),
        },
        DenominatorMode::PlainNegatives => NegStyle::Plain,
    }
}

/// Angle-compensated loss for one anchor. `Ok(None)` signals an empty
/// positive set; the caller decides whether that skips or errors.
pub fn accon_anchor_loss(
    g: &mut Graph,
    i: usize,
    z: NodeId,
    labels: &[f64],
    pairs: &PairSets,
    cfg: &LossConfig,
    range: &LabelRange,
) -> Result<Option<NodeId>, LossError> {
    check_tau(cfg.tau)?;
    let zt = g.value(z).clone();
    check_unit_rows(&zt)?;
    let n = check_batch(&zt, labels, pairs)?;
    if i >= n {
        return Err(LossError::AnchorOutOfRange { index: i, len: n });
    }
    if pairs.positives[i].is_empty() {
        return Ok(None);
    }
    let style = neg_style(cfg, labels, range);
    Ok(Some(masked_contrastive_loss(
        g,
        z,
        pairs,
        cfg.tau,
        style,
        AnchorWeights::Single(i),
    )?))
}

/// Mean of the per-anchor angle-compensated losses over all 2N anchors;
/// anchors without positives contribute 0.
pub fn accon_batch_loss(
    g: &mut Graph,
    z: NodeId,
    labels: &[f64],
    pairs: &PairSets,
    cfg: &LossConfig,
    range: &LabelRange,
) -> Result<NodeId, LossError> {
    check_tau(cfg.tau)?;
    let zt = g.value(z).clone();
    check_unit_rows(&zt)?;
    check_batch(&zt, labels, pairs)?;
    let style = neg_style(cfg, labels, range);
    masked_contrastive_loss(g, z, pairs, cfg.tau, style, AnchorWeights::Uniform)
}

/// Mean absolute or mean squared error between same-shape tensors.
pub fn regression_loss(
    g: &mut Graph,
    y_hat: NodeId,
    y: NodeId,
    kind: RegressionKind,
) -> Result<NodeId, LossError> {
    let (sh, st) = (g.value(y_hat).shape(), g.value(y).shape());
    if sh != st {
        return Err(LossError::ShapeMismatch {
            left: sh.to_vec(),
            right: st.to_vec(),
        });
    }
    let n = g.value(y).len() as f64;
    let diff = g.sub(y_hat, y)?;
    let per_elem = match kind {
        RegressionKind::Mae => g.map(crate::graph::MapKind::Abs, diff)?,
        RegressionKind::Mse => g.mul(diff, diff)?,
    };
    let total = g.sum(per_elem)?;
    Ok(g.scale(total, 1.0 / n)?)
}

/// reg + gamma * accon.
pub fn combined_loss(
    g: &mut Graph,
    reg: NodeId,
    accon: NodeId,
    gamma: f64,
) -> Result<NodeId, LossError> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(LossError::BadGamma { gamma });
    }
    let weighted = g.scale(accon, gamma)?;
    Ok(g.add(reg, weighted)?)
}

// ── scalar reference route ───────────────────────────────────────────────

/// Straight-line double-loop evaluations of the same losses. These never
/// touch the graph; the bound diagnostics are built on them and the test
/// suites use them as oracles for the vectorized route.
pub mod reference {
    use super::*;

    pub(crate) fn dot_rows(z: &Tensor, i: usize, j: usize) -> f64 {
        let d = z.cols();
        let (a, b) = (&z.values()[i * d..(i + 1) * d], &z.values()[j * d..(j + 1) * d]);
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn neg_similarity(
        z: &Tensor,
        labels: &[f64],
        i: usize,
        m: usize,
        cfg: &LossConfig,
        range: &LabelRange,
    ) -> Result<f64, LossError> {
        let c = dot_rows(z, i, m);
        match cfg.denominator {
            DenominatorMode::PlainNegatives => Ok(c),
            DenominatorMode::CompensatedNegatives => {
                let phi = compensation_angle(labels[i], labels[m], range)?;
                Ok(compensated_cosine(c, phi, cfg.eps)?)
            }
        }
    }

    /// Per-anchor angle-compensated losses; None where P(i) is empty.
    pub fn accon_anchor_losses(
        z: &Tensor,
        labels: &[f64],
        pairs: &PairSets,
        cfg: &LossConfig,
        range: &LabelRange,
    ) -> Result<Vec<Option<f64>>, LossError> {
        check_tau(cfg.tau)?;
        check_unit_rows(z)?;
        let n = check_batch(z, labels, pairs)?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let pos = &pairs.positives[i];
            if pos.is_empty() {
                out.push(None);
                continue;
            }
            let mut den = 0.0;
            for &k in pos {
                den += (dot_rows(z, i, k) / cfg.tau).exp();
            }
            for &m in &pairs.negatives[i] {
                den += (neg_similarity(z, labels, i, m, cfg, range)? / cfg.tau).exp();
            }
            let mut li = 0.0;
            for &p in pos {
                li -= ((dot_rows(z, i, p) / cfg.tau).exp() / den).ln();
            }
            out.push(Some(li / pos.len() as f64));
        }
        Ok(out)
    }

    /// Batch mean over all anchors, empty-positive anchors contributing 0.
    pub fn accon_batch(
        z: &Tensor,
        labels: &[f64],
        pairs: &PairSets,
        cfg: &LossConfig,
        range: &LabelRange,
    ) -> Result<f64, LossError> {
        let per = accon_anchor_losses(z, labels, pairs, cfg, range)?;
        let n = per.len() as f64;
        Ok(per.iter().map(|l| l.unwrap_or(0.0)).sum::<f64>() / n)
    }

    /// Plain supervised-contrastive batch loss by double loop.
    pub fn naive_supcon(z: &Tensor, pairs: &PairSets, tau: f64) -> Result<f64, LossError> {
        check_tau(tau)?;
        check_unit_rows(z)?;
        let n = pairs.len();
        let mut total = 0.0;
        for i in 0..n {
            let pos = &pairs.positives[i];
            if pos.is_empty() {
                continue;
            }
            let mut den = 0.0;
            for &k in pos.iter().chain(&pairs.negatives[i]) {
                den += (dot_rows(z, i, k) / tau).exp();
            }
            let mut li = 0.0;
            for &p in pos {
                li -= ((dot_rows(z, i, p) / tau).exp() / den).ln();
            }
            total += li / pos.len() as f64;
        }
        Ok(total / n as f64)
    }
}

// ── lower-bound diagnostics ──────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    /// The quoted form of the constant: log(N/tau)/(2N).
    Stated,
    /// What re-deriving the bound step by step yields: log(2N/tau)/(2N).
    Derived,
}

/// Closed-form lower-bound candidate
/// (1/4N^2) sum_i sum_{m in N(i)} cos(theta~_{i,m})/tau - const(variant),
/// evaluated on the scalar route.
pub fn lower_bound(
    z: &Tensor,
    labels: &[f64],
    pairs: &PairSets,
    cfg: &LossConfig,
    range: &LabelRange,
    variant: BoundVariant,
) -> Result<f64, LossError> {
    check_tau(cfg.tau)?;
    check_unit_rows(z)?;
    let n2 = check_batch(z, labels, pairs)? as f64; // 2N
    let mut first = 0.0;
    for i in 0..pairs.len() {
        for &m in &pairs.negatives[i] {
            let c = reference::dot_rows(z, i, m);
            let phi = compensation_angle(labels[i], labels[m], range)?;
            first += compensated_cosine(c, phi, cfg.eps)? / cfg.tau;
        }
    }
    first /= n2 * n2; // 4N^2
    let constant = match variant {
        BoundVariant::Stated => ((n2 / 2.0) / cfg.tau).ln() / n2,
        BoundVariant::Derived => (n2 / cfg.tau).ln() / n2,
    };
    Ok(first - constant)
}

/// Survey of the lower-bound inequalities on one batch. Nothing here aborts
/// training; callers decide what to do with the flags.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub l_accon: f64,
    pub l_star_stated: f64,
    pub l_star_derived: f64,
    /// Per-anchor intermediate inequality held (margins >= -1e-9).
    pub intermediate_ok: bool,
    pub stated_ok: bool,
    pub derived_ok: bool,
    /// One margin per anchor with nonempty P(i) and N(i); anchors without
    /// negatives make the inequality vacuous and are not listed.
    pub per_anchor_margins: Vec<f64>,
}

/// Evaluate, per anchor with positives and negatives, the valid intermediate
/// inequality
/// L_i >= (1/|P(i)|) [log sum_N exp(cos theta~/tau) - log sum_P exp(s/tau)],
/// plus both closed-form bound variants against the batch loss.
pub fn bound_diagnostics(
    z: &Tensor,
    labels: &[f64],
    pairs: &PairSets,
    cfg: &LossConfig,
    range: &LabelRange,
) -> Result<BoundReport, LossError> {
    let per_anchor = reference::accon_anchor_losses(z, labels, pairs, cfg, range)?;
    let n = pairs.len();
    let mut margins = Vec::new();
    for i in 0..n {
        let Some(li) = per_anchor[i] else { continue };
        if pairs.negatives[i].is_empty() {
            continue;
        }
        let pos_logits: Vec<f64> = pairs.positives[i]
            .iter()
            .map(|&p| reference::dot_rows(z, i, p) / cfg.tau)
            .collect();
        let mut neg_logits = Vec::with_capacity(pairs.negatives[i].len());
        for &m in &pairs.negatives[i] {
            let c = reference::dot_rows(z, i, m);
            let phi = compensation_angle(labels[i], labels[m], range)?;
            neg_logits.push(compensated_cosine(c, phi, cfg.eps)? / cfg.tau);
        }
        let bracket =
            (logsumexp(&neg_logits) - logsumexp(&pos_logits)) / pairs.positives[i].len() as f64;
        margins.push(li - bracket);
    }
    let l_accon =
        per_anchor.iter().map(|l| l.unwrap_or(0.0)).sum::<f64>() / n as f64;
    let l_star_stated = lower_bound(z, labels, pairs, cfg, range, BoundVariant::Stated)?;
    let l_star_derived = lower_bound(z, labels, pairs, cfg, range, BoundVariant::Derived)?;
    Ok(BoundReport {
        l_accon,
        l_star_stated,
        l_star_derived,
        intermediate_ok: margins.iter().all(|&m| m >= MARGIN_TOL),
        stated_ok: l_accon >= l_star_stated,
        derived_ok: l_accon >= l_star_derived,
        per_anchor_margins: margins,
    })
}
