//! Regression metrics, shot-split reporting, and embedding-geometry diagnostics.
//!
//! Three layers:
//! - [`compute_metrics`]: MAE / MSE / GM / R² / Pearson over a prediction vector.
//! - [`shot_split_metrics`]: the same metrics routed into many/medium/few-shot
//!   subsets by how often each sample's label bin occurred during training.
//! - [`geometry_report`]: correlation between pairwise embedding cosines and
//!   normalized label distances, plus a binned cosine-vs-distance curve.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{GeometryError, LabelRange};
use crate::losses::UNIT_ROW_TOL;
use crate::pairing::{BinConfig, PairingError};
use crate::seeding::stream_rng;
use crate::tensor::Tensor;
use crate::textio::fmt_f64;

/// Stabilizer added to |error| before the log inside the geometric mean.
pub const DEFAULT_EPS_GM: f64 = 1e-8;

/// A label bin seen at least this many times in training counts as many-shot.
pub const DEFAULT_MANY_MIN: usize = 100;

/// A label bin seen fewer than this many times in training counts as few-shot.
pub const DEFAULT_FEW_MAX: usize = 20;

/// Pairwise diagnostics subsample down to this many rows before the O(n²) pass.
pub const PAIRWISE_SAMPLE_CAP: usize = 20_000;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction and target lengths differ: {predictions} vs {targets}")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("need at least 2 samples, got {got}")]
    TooFewSamples { got: usize },
    #[error("non-finite value in {which}")]
    NonFiniteInput { which: &'static str },
    #[error("geometric-mean stabilizer must be finite and >= 0, got {got}")]
    BadEpsGm { got: f64 },
    #[error("targets all equal; R^2 is undefined at zero label variance")]
    ZeroLabelVariance,
    #[error("shot thresholds invalid: few_max {few_max} must not exceed many_min {many_min}")]
    BadThresholds { many_min: usize, few_max: usize },
    #[error("training histogram has {got} bins but the bin config implies {expected}")]
    HistogramMismatch { expected: usize, got: usize },
    #[error("embedding matrix is {rows}x{cols} but {labels} labels were supplied")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        labels: usize,
    },
    #[error("embedding row {row} has norm {norm}; expected unit length")]
    NonUnitRow { row: usize, norm: f64 },
    #[error("distance-bin count must be >= 1")]
    ZeroBins,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
}

/// Error-magnitude and association metrics for one prediction vector.
#[derive(Clone, Debug, Serialize)]
pub struct MetricReport {
    pub mae: f64,
    pub mse: f64,
    /// Geometric mean of |error| + eps_gm (the stabilizer keeps zero errors finite).
    pub gm: f64,
    /// 1 - MSE / Var(y), with population variance.
    pub r2: f64,
    /// Linear correlation between predictions and targets; 0 when the
    /// predictions are constant (no linear association to measure).
    pub pearson: f64,
    /// Present only on reports produced by [`shot_split_metrics`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shot: Option<ShotBreakdown>,
}

/// Frequency thresholds that route label bins into many/medium/few shot.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ShotThresholds {
    /// Training count at or above which a bin is many-shot.
    pub many_min: usize,
    /// Training count strictly below which a bin is few-shot.
    pub few_max: usize,
}

impl Default for ShotThresholds {
    fn default() -> Self {
        Self {
            many_min: DEFAULT_MANY_MIN,
            few_max: DEFAULT_FEW_MAX,
        }
    }
}

/// Metrics over one shot subset. R² and Pearson are omitted when undefined
/// (fewer than two samples, or zero variance on the relevant side).
#[derive(Clone, Debug, Serialize)]
pub struct ShotSlice {
    pub n: usize,
    pub mae: f64,
    pub mse: f64,
    pub gm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pearson: Option<f64>,
}

/// Per-shot subset metrics; a subset with no samples is absent, not zeroed.
#[derive(Clone, Debug, Serialize)]
pub struct ShotBreakdown {
    pub thresholds: ShotThresholds,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub many: Option<ShotSlice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub medium: Option<ShotSlice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub few: Option<ShotSlice>,
}

/// One bar of the cosine-vs-distance curve. `mean_cos` is absent for empty
/// bins; `std_cos` (sample standard deviation) additionally needs two pairs.
#[derive(Clone, Debug, Serialize)]
pub struct GeometryBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub n_pairs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_cos: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_cos: Option<f64>,
}

/// Pairwise embedding-geometry diagnostics: how cosine similarity tracks
/// label distance. A well-ordered embedding makes `pearson` strongly negative.
#[derive(Clone, Debug, Serialize)]
pub struct GeometryReport {
    /// Correlation of cos(z_i, z_j) against |y_i - y_j| / span over all pairs;
    /// absent when either side has zero variance (e.g. a single pair).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pearson: Option<f64>,
    /// Rows that entered the pairwise pass (after any subsampling).
    pub n_samples: usize,
    pub n_pairs: usize,
    pub bins: Vec<GeometryBin>,
}

fn check_finite(values: &[f64], which: &'static str) -> Result<(), MetricsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MetricsError::NonFiniteInput { which })
    }
}

/// MAE, MSE, geometric-mean error, R², and Pearson correlation.
///
/// `eps_gm` stabilizes the geometric mean: gm = exp(mean ln(|e| + eps_gm)).
/// Fails when fewer than two samples are given or the targets are constant
/// (R² divides by label variance).
pub fn compute_metrics(
    predictions: &[f64],
    targets: &[f64],
    eps_gm: f64,
) -> Result<MetricReport, MetricsError> {
    if predictions.len() != targets.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            targets: targets.len(),
        });
    }
    let n = targets.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples { got: n });
    }
    check_finite(predictions, "predictions")?;
    check_finite(targets, "targets")?;
    if !(eps_gm.is_finite() && eps_gm >= 0.0) {
        return Err(MetricsError::BadEpsGm { got: eps_gm });
    }

    let nf = n as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut log_sum = 0.0;
    for (&p, &t) in predictions.iter().zip(targets) {
        let e = p - t;
        abs_sum += e.abs();
        sq_sum += e * e;
        log_sum += (e.abs() + eps_gm).ln();
    }
    let mae = abs_sum / nf;
    let mse = sq_sum / nf;
    let gm = (log_sum / nf).exp();

    let y_mean = targets.iter().sum::<f64>() / nf;
    let var_y = targets.iter().map(|&t| (t - y_mean).powi(2)).sum::<f64>() / nf;
    if var_y == 0.0 {
        return Err(MetricsError::ZeroLabelVariance);
    }
    let r2 = 1.0 - mse / var_y;

    let p_mean = predictions.iter().sum::<f64>() / nf;
    let mut cov = 0.0;
    let mut var_p = 0.0;
    for (&p, &t) in predictions.iter().zip(targets) {
        cov += (p - p_mean) * (t - y_mean);
        var_p += (p - p_mean) * (p - p_mean);
    }
    // cov and var_p are deviation sums; var_y * nf restores the matching sum.
    let den = (var_p * (var_y * nf)).sqrt();
    let pearson = if den == 0.0 { 0.0 } else { cov / den };

    Ok(MetricReport {
        mae,
        mse,
        gm,
        r2,
        pearson,
        shot: None,
    })
}

/// Metrics for one subset; MAE/MSE/GM need one sample, R²/Pearson need two
/// plus nonzero variance and are omitted otherwise instead of erroring.
fn slice_metrics(predictions: &[f64], targets: &[f64], eps_gm: f64) -> ShotSlice {
    let n = targets.len();
    let nf = n as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut log_sum = 0.0;
    for (&p, &t) in predictions.iter().zip(targets) {
        let e = p - t;
        abs_sum += e.abs();
        sq_sum += e * e;
        log_sum += (e.abs() + eps_gm).ln();
    }
    let mae = abs_sum / nf;
    let mse = sq_sum / nf;
    let gm = (log_sum / nf).exp();

    let mut r2 = None;
    let mut pearson = None;
    if n >= 2 {
        let y_mean = targets.iter().sum::<f64>() / nf;
        let var_y = targets.iter().map(|&t| (t - y_mean).powi(2)).sum::<f64>() / nf;
        if var_y > 0.0 {
            r2 = Some(1.0 - mse / var_y);
            let p_mean = predictions.iter().sum::<f64>() / nf;
            let mut cov = 0.0;
            let mut var_p = 0.0;
            for (&p, &t) in predictions.iter().zip(targets) {
                cov += (p - p_mean) * (t - y_mean);
                var_p += (p - p_mean) * (p - p_mean);
            }
            if var_p > 0.0 {
                pearson = Some(cov / (var_p * (var_y * nf)).sqrt());
            }
        }
    }
    ShotSlice {
        n,
        mae,
        mse,
        gm,
        r2,
        pearson,
    }
}

/// Overall metrics plus a many/medium/few-shot breakdown.
///
/// Each test sample is routed by how many *training* samples fell in its
/// label bin: `count >= many_min` is many-shot, `count < few_max` is
/// few-shot, anything between is medium-shot. `train_histogram[b]` must hold
/// the training count of bin `b` under the same `bins` used here.
pub fn shot_split_metrics(
    predictions: &[f64],
    targets: &[f64],
    train_histogram: &[usize],
    bins: &BinConfig,
    thresholds: ShotThresholds,
    eps_gm: f64,
) -> Result<MetricReport, MetricsError> {
    if thresholds.few_max > thresholds.many_min {
        return Err(MetricsError::BadThresholds {
            many_min: thresholds.many_min,
            few_max: thresholds.few_max,
        });
    }
    if train_histogram.len() != bins.n_bins() {
        return Err(MetricsError::HistogramMismatch {
            expected: bins.n_bins(),
            got: train_histogram.len(),
        });
    }
    let mut report = compute_metrics(predictions, targets, eps_gm)?;

    let mut subsets: [(Vec<f64>, Vec<f64>); 3] = Default::default();
    for (&p, &t) in predictions.iter().zip(targets) {
        let count = train_histogram[bins.bin_index(t)?];
        let slot = if count >= thresholds.many_min {
            0
        } else if count < thresholds.few_max {
            2
        } else {
            1
        };
        subsets[slot].0.push(p);
        subsets[slot].1.push(t);
    }
    let slice_of = |(p, t): &(Vec<f64>, Vec<f64>)| {
        if t.is_empty() {
            None
        } else {
            Some(slice_metrics(p, t, eps_gm))
        }
    };
    report.shot = Some(ShotBreakdown {
        thresholds,
        many: slice_of(&subsets[0]),
        medium: slice_of(&subsets[1]),
        few: slice_of(&subsets[2]),
    });
    Ok(report)
}

fn row_dot(z: &Tensor, i: usize, j: usize) -> f64 {
    let d = z.cols();
    let vals = z.values();
    let (a, b) = (&vals[i * d..(i + 1) * d], &vals[j * d..(j + 1) * d]);
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine-vs-label-distance diagnostics over all sample pairs.
///
/// `z` holds unit-norm embedding rows, one per label in `y`. Distances are
/// normalized to [0, 1] by the label span and histogrammed into `n_bins`
/// equal-width bins. When more than [`PAIRWISE_SAMPLE_CAP`] rows are given, a
/// subset of that size is drawn deterministically from `subsample_seed`.
pub fn geometry_report(
    z: &Tensor,
    y: &[f64],
    range: &LabelRange,
    n_bins: usize,
    subsample_seed: u64,
) -> Result<GeometryReport, MetricsError> {
    geometry_report_capped(z, y, range, n_bins, subsample_seed, PAIRWISE_SAMPLE_CAP)
}

fn geometry_report_capped(
    z: &Tensor,
    y: &[f64],
    range: &LabelRange,
    n_bins: usize,
    subsample_seed: u64,
    cap: usize,
) -> Result<GeometryReport, MetricsError> {
    let n = y.len();
    if z.rank() != 2 || z.rows() != n {
        return Err(MetricsError::ShapeMismatch {
            rows: z.rows(),
            cols: z.cols(),
            labels: n,
        });
    }
    if n < 2 {
        return Err(MetricsError::TooFewSamples { got: n });
    }
    if n_bins == 0 {
        return Err(MetricsError::ZeroBins);
    }
    check_finite(y, "labels")?;
    for &label in y {
        range.check(label)?;
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(MetricsError::ZeroLabelVariance);
    }
    let d = z.cols();
    for row in 0..n {
        let norm = z.values()[row * d..(row + 1) * d]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_ROW_TOL {
            return Err(MetricsError::NonUnitRow { row, norm });
        }
    }

    let chosen: Vec<usize> = if n > cap {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut stream_rng(subsample_seed, "geometry-subsample"));
        idx.truncate(cap);
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };

    let span = range.span();
    let m = chosen.len();
    let mut n_pairs = 0usize;
    let (mut sum_c, mut sum_d, mut sum_cd, mut sum_cc, mut sum_dd) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut bin_count = vec![0usize; n_bins];
    let mut bin_sum = vec![0.0f64; n_bins];
    let mut bin_sumsq = vec![0.0f64; n_bins];
    for a in 0..m {
        for b in (a + 1)..m {
            let (i, j) = (chosen[a], chosen[b]);
            let c = row_dot(z, i, j);
            let dist = (y[i] - y[j]).abs() / span;
            n_pairs += 1;
            sum_c += c;
            sum_d += dist;
            sum_cd += c * dist;
            sum_cc += c * c;
            sum_dd += dist * dist;
            let k = ((dist * n_bins as f64) as usize).min(n_bins - 1);
            bin_count[k] += 1;
            bin_sum[k] += c;
            bin_sumsq[k] += c * c;
        }
    }

    let pf = n_pairs as f64;
    let mean_c = sum_c / pf;
    let mean_d = sum_d / pf;
    let cov = sum_cd / pf - mean_c * mean_d;
    let var_c = (sum_cc / pf - mean_c * mean_c).max(0.0);
    let var_d = (sum_dd / pf - mean_d * mean_d).max(0.0);
    let pearson = if var_c > 0.0 && var_d > 0.0 {
        Some(cov / (var_c * var_d).sqrt())
    } else {
        None
    };

    let bins = (0..n_bins)
        .map(|k| {
            let cnt = bin_count[k];
            let mean_cos = (cnt >= 1).then(|| bin_sum[k] / cnt as f64);
            let std_cos = (cnt >= 2).then(|| {
                let mean = bin_sum[k] / cnt as f64;
                ((bin_sumsq[k] - cnt as f64 * mean * mean).max(0.0) / (cnt - 1) as f64).sqrt()
            });
            GeometryBin {
                bin_lo: k as f64 / n_bins as f64,
                bin_hi: if k + 1 == n_bins {
                    1.0
                } else {
                    (k + 1) as f64 / n_bins as f64
                },
                n_pairs: cnt,
                mean_cos,
                std_cos,
            }
        })
        .collect();

    Ok(GeometryReport {
        pearson,
        n_samples: m,
        n_pairs,
        bins,
    })
}

/// Write the binned cosine-vs-distance curve as CSV; absent statistics
/// (empty bin, single-pair bin) leave their field empty.
pub fn write_geometry_csv(path: &Path, report: &GeometryReport) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "bin_lo,bin_hi,mean_cos,std_cos,n_pairs")?;
    for bin in &report.bins {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_f64(bin.bin_lo),
            fmt_f64(bin.bin_hi),
            opt(bin.mean_cos),
            opt(bin.std_cos),
            bin.n_pairs
        )?;
    }
    w.flush()
}
