//! Synthetic regression datasets: a fixed sinusoidal label-to-feature
//! manifold, controllable label distributions, natural and
//! distribution-balanced splits, two-view augmentation, and CSV interchange.

use crate::geometry::{GeometryError, LabelRange};
use crate::seeding::stream_rng;
use crate::tensor::{Tensor, TensorError};
use crate::textio::fmt_f64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// Frequency spread multiplier for the feature manifold.
const MANIFOLD_SPREAD: f64 = 2.0;
/// Default bin count for distribution-balanced splits.
pub const DEFAULT_DIR_BINS: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset spec: {what}")]
    BadSpec { what: String },
    #[error("split fractions {train}/{val}/{test} must be non-negative and sum to 1")]
    BadFractions { train: f64, val: f64, test: f64 },
    #[error("balanced split infeasible: bin {bin} has {have} samples, needs {need}")]
    InfeasibleBin { bin: usize, have: usize, need: usize },
    #[error(
        "balanced split infeasible: {split} quota {quota} is below one sample per bin ({bins} bins)"
    )]
    InfeasibleQuota {
        split: &'static str,
        quota: usize,
        bins: usize,
    },
    #[error("invalid augmentation spec: {what}")]
    BadAugment { what: String },
    #[error("line {line}: {what}")]
    Malformed { line: usize, what: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LabelDist {
    Uniform,
    /// Exponential with the given rate, truncated to the label range by
    /// inverse-CDF sampling.
    Exponential { rate: f64 },
    /// Even mixture of two normals at 25% and 75% of the range,
    /// sigma = range/10, truncated by rejection.
    Mixture,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Random partition at the given fractions.
    Natural,
    /// Validation and test get near-uniform per-bin label counts;
    /// the remainder trains.
    Dir,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, DataError> {
        let ok = train >= 0.0
            && val >= 0.0
            && test >= 0.0
            && (train + val + test - 1.0).abs() <= 1e-9;
        if !ok {
            return Err(DataError::BadFractions { train, val, test });
        }
        Ok(Self { train, val, test })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub d_in: usize,
    pub label_range: LabelRange,
    pub label_dist: LabelDist,
    /// Fixes the feature manifold; share it to sample one manifold twice.
    pub manifold_seed: u64,
    /// Fixes label draws, feature noise, and split shuffles.
    pub sample_seed: u64,
    pub noise_sigma: f64,
    pub split: SplitFractions,
    pub split_mode: SplitMode,
    /// Bin count for the balanced split histogram.
    pub dir_bin_count: usize,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_samples == 0 {
            return Err(DataError::BadSpec {
                what: "n_samples must be >= 1".into(),
            });
        }
        if self.d_in == 0 {
            return Err(DataError::BadSpec {
                what: "d_in must be >= 1".into(),
            });
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(DataError::BadSpec {
                what: format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma),
            });
        }
        if let LabelDist::Exponential { rate } = self.label_dist {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(DataError::BadSpec {
                    what: format!("exponential rate must be finite and > 0, got {rate}"),
                });
            }
        }
        if self.split_mode == SplitMode::Dir && self.dir_bin_count == 0 {
            return Err(DataError::BadSpec {
                what: "dir_bin_count must be >= 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    /// Stable sample identities, preserved across splits.
    pub ids: Vec<usize>,
    pub labels: Vec<f64>,
    /// [n x d_in]
    pub features: Tensor,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// New dataset holding the given rows (by position, not id).
    pub fn select(&self, rows: &[usize]) -> LabeledDataset {
        let d = self.features.cols();
        let mut values = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            values.extend_from_slice(&self.features.values()[r * d..(r + 1) * d]);
        }
        LabeledDataset {
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            features: Tensor::new([rows.len(), d], values).expect("selected shape"),
        }
    }
}

/// The fixed label-to-feature map: one sinusoid per feature,
/// x_k = a_k * sin(w_k * y + b_k), coefficients pinned by the seed.
#[derive(Clone, Debug)]
pub struct Manifold {
    amps: Vec<f64>,
    freqs: Vec<f64>,
    phases: Vec<f64>,
}

impl Manifold {
    pub fn new(d_in: usize, range: &LabelRange, manifold_seed: u64) -> Self {
        let mut rng = stream_rng(manifold_seed, "manifold");
        let freq_sigma = 2.0 * std::f64::consts::PI * MANIFOLD_SPREAD / range.span();
        let freq_dist = Normal::new(0.0, freq_sigma).expect("positive sigma");
        let amp_dist = Normal::new(0.0, 1.0).expect("positive sigma");
        let mut amps = Vec::with_capacity(d_in);
        let mut freqs = Vec::with_capacity(d_in);
        let mut phases = Vec::with_capacity(d_in);
        for _ in 0..d_in {
            amps.push(amp_dist.sample(&mut rng));
            freqs.push(freq_dist.sample(&mut rng));
            phases.push(rng.gen_range(0.0..2.0 * std::f64::consts::PI));
        }
        Self {
            amps,
            freqs,
            phases,
        }
    }

    pub fn features(&self, y: f64) -> Vec<f64> {
        self.amps
            .iter()
            .zip(&self.freqs)
            .zip(&self.phases)
            .map(|((a, w), b)| a * (w * y + b).sin())
            .collect()
    }
}

fn draw_label<R: Rng>(rng: &mut R, dist: LabelDist, range: &LabelRange) -> f64 {
    let (lo, span) = (range.y_min(), range.span());
    match dist {
        LabelDist::Uniform => lo + rng.gen_range(0.0..1.0) * span,
        LabelDist::Exponential { rate } => {
            let u: f64 = rng.gen_range(0.0..1.0);
            lo - (1.0 - u * (1.0 - (-rate * span).exp())).ln() / rate
        }
        LabelDist::Mixture => {
            let mu = if rng.gen_bool(0.5) {
                lo + 0.25 * span
            } else {
                lo + 0.75 * span
            };
            let normal = Normal::new(mu, span / 10.0).expect("positive sigma");
            loop {
                let y = normal.sample(rng);
                if range.contains(y) {
                    return y;
                }
            }
        }
    }
}

/// Sample a dataset: labels from the configured distribution, features from
/// the manifold plus isotropic Gaussian noise. Pure: same inputs, same rows.
pub fn generate(spec: &DatasetSpec) -> Result<LabeledDataset, DataError> {
    spec.validate()?;
    let manifold = Manifold::new(spec.d_in, &spec.label_range, spec.manifold_seed);
    let mut label_rng = stream_rng(spec.sample_seed, "labels");
    let labels: Vec<f64> = (0..spec.n_samples)
        .map(|_| draw_label(&mut label_rng, spec.label_dist, &spec.label_range))
        .collect();

    let mut values = Vec::with_capacity(spec.n_samples * spec.d_in);
    let mut noise_rng = stream_rng(spec.sample_seed, "noise");
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("positive sigma"));
    for &y in &labels {
        let mut row = manifold.features(y);
        if let Some(noise) = &noise {
            for v in &mut row {
                *v += noise.sample(&mut noise_rng);
            }
        }
        values.extend(row);
    }
    Ok(LabeledDataset {
        ids: (0..spec.n_samples).collect(),
        labels,
        features: Tensor::new([spec.n_samples, spec.d_in], values)?,
    })
}

fn rounded_counts(n: usize, split: &SplitFractions) -> (usize, usize, usize) {
    let n_val = (n as f64 * split.val).round() as usize;
    let n_test = (n as f64 * split.test).round() as usize;
    let n_val = n_val.min(n);
    let n_test = n_test.min(n - n_val);
    (n - n_val - n_test, n_val, n_test)
}

/// Split into train/val/test per the configured mode. Returned rows are in
/// ascending original order; only membership is randomized.
pub fn split(
    ds: &LabeledDataset,
    spec: &DatasetSpec,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset), DataError> {
    spec.validate()?;
    let n = ds.len();
    let (_, n_val, n_test) = rounded_counts(n, &spec.split);
    let mut rng = stream_rng(spec.sample_seed, "split");
    match spec.split_mode {
        SplitMode::Natural => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut val: Vec<usize> = order[..n_val].to_vec();
            let mut test: Vec<usize> = order[n_val..n_val + n_test].to_vec();
            let mut train: Vec<usize> = order[n_val + n_test..].to_vec();
            val.sort_unstable();
            test.sort_unstable();
            train.sort_unstable();
            Ok((ds.select(&train), ds.select(&val), ds.select(&test)))
        }
        SplitMode::Dir => {
            let bins = spec.dir_bin_count;
            for (split_name, quota) in [("validation", n_val), ("test", n_test)] {
                if quota < bins {
                    return Err(DataError::InfeasibleQuota {
                        split: split_name,
                        quota,
                        bins,
                    });
                }
            }
            // Per-bin quotas: as even as possible, larger shares first.
            let quota_for = |total: usize, bin: usize| -> usize {
                total / bins + usize::from(bin < total % bins)
            };
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
            let span = spec.label_range.span();
            for (row, &y) in ds.labels.iter().enumerate() {
                spec.label_range.check(y)?;
                let b = (((y - spec.label_range.y_min()) / span * bins as f64) as usize)
                    .min(bins - 1);
                members[b].push(row);
            }
            let mut val = Vec::with_capacity(n_val);
            let mut test = Vec::with_capacity(n_test);
            let mut train = Vec::new();
            for (b, rows) in members.iter_mut().enumerate() {
                let need = quota_for(n_val, b) + quota_for(n_test, b);
                if rows.len() < need {
                    return Err(DataError::InfeasibleBin {
                        bin: b,
                        have: rows.len(),
                        need,
                    });
                }
                rows.shuffle(&mut rng);
                let qv = quota_for(n_val, b);
                let qt = quota_for(n_test, b);
                val.extend_from_slice(&rows[..qv]);
                test.extend_from_slice(&rows[qv..qv + qt]);
                train.extend_from_slice(&rows[qv + qt..]);
            }
            val.sort_unstable();
            test.sort_unstable();
            train.sort_unstable();
            Ok((ds.select(&train), ds.select(&val), ds.select(&test)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSpec {
    /// Additive Gaussian noise scale.
    pub sigma_aug: f64,
    /// Per-feature zeroing probability.
    pub dropout_p: f64,
    pub seed: u64,
}

impl AugmentSpec {
    pub fn new(sigma_aug: f64, dropout_p: f64, seed: u64) -> Result<Self, DataError> {
        if !(sigma_aug.is_finite() && sigma_aug >= 0.0) {
            return Err(DataError::BadAugment {
                what: format!("sigma_aug must be finite and >= 0, got {sigma_aug}"),
            });
        }
        if !(dropout_p.is_finite() && (0.0..1.0).contains(&dropout_p)) {
            return Err(DataError::BadAugment {
                what: format!("dropout_p must lie in [0,1), got {dropout_p}"),
            });
        }
        Ok(Self {
            sigma_aug,
            dropout_p,
            seed,
        })
    }
}

/// Two independent augmented views stacked as [view1; view2]; the caller is
/// responsible for duplicating labels to match.
pub fn augment_two_views(x: &Tensor, spec: &AugmentSpec) -> Result<Tensor, DataError> {
    AugmentSpec::new(spec.sigma_aug, spec.dropout_p, spec.seed)?;
    let (n, d) = (x.rows(), x.cols());
    let noise = (spec.sigma_aug > 0.0)
        .then(|| Normal::new(0.0, spec.sigma_aug).expect("positive sigma"));
    let mut out = Vec::with_capacity(2 * n * d);
    for view in ["aug-view1", "aug-view2"] {
        let mut rng = stream_rng(spec.seed, view);
        for &v in x.values() {
            let mut v = v;
            if let Some(noise) = &noise {
                v += noise.sample(&mut rng);
            }
            if spec.dropout_p > 0.0 && rng.gen_bool(spec.dropout_p) {
                v = 0.0;
            }
            out.push(v);
        }
    }
    Ok(Tensor::new([2 * n, d], out)?)
}

// ── CSV interchange ──────────────────────────────────────────────────────

/// Write `id,y,x0..x{d-1}` with a mandatory header, UTF-8, '\n' endings,
/// floats at 17 significant digits.
pub fn save_csv(path: &Path, ds: &LabeledDataset) -> Result<(), DataError> {
    let d = ds.features.cols();
    let mut out = String::from("id,y");
    for k in 0..d {
        let _ = write!(out, ",x{k}");
    }
    out.push('\n');
    for i in 0..ds.len() {
        let _ = write!(out, "{},{}", ds.ids[i], fmt_f64(ds.labels[i]));
        for v in &ds.features.values()[i * d..(i + 1) * d] {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a dataset written by [`save_csv`]; header and row widths are checked.
pub fn load_csv(path: &Path) -> Result<LabeledDataset, DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Malformed {
        line: 1,
        what: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "id" || cols[1] != "y" {
        return Err(DataError::Malformed {
            line: 1,
            what: format!("header must be id,y,x0,..; got '{header}'"),
        });
    }
    for (k, c) in cols[2..].iter().enumerate() {
        if *c != format!("x{k}") {
            return Err(DataError::Malformed {
                line: 1,
                what: format!("feature column {} named '{c}', expected 'x{k}'", k + 2),
            });
        }
    }
    let d = cols.len() - 2;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(DataError::Malformed {
                line: lineno,
                what: format!("expected {} fields, found {}", d + 2, fields.len()),
            });
        }
        let parse_f64 = |s: &str, what: &str| -> Result<f64, DataError> {
            s.parse().map_err(|_| DataError::Malformed {
                line: lineno,
                what: format!("bad {what} '{s}'"),
            })
        };
        ids.push(fields[0].parse().map_err(|_| DataError::Malformed {
            line: lineno,
            what: format!("bad id '{}'", fields[0]),
        })?);
        labels.push(parse_f64(fields[1], "label")?);
        for f in &fields[2..] {
            values.push(parse_f64(f, "feature")?);
        }
    }
    let n = ids.len();
    Ok(LabeledDataset {
        ids,
        labels,
        features: Tensor::new([n, d], values)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairing::{build_pair_sets, BinConfig};

    fn range100() -> LabelRange {
        LabelRange::new(0.0, 100.0).unwrap()
    }

    fn base_spec(n: usize) -> DatasetSpec {
        DatasetSpec {
            n_samples: n,
            d_in: 6,
            label_range: range100(),
            label_dist: LabelDist::Uniform,
            manifold_seed: 11,
            sample_seed: 22,
            noise_sigma: 0.05,
            split: SplitFractions::new(0.8, 0.1, 0.1).unwrap(),
            split_mode: SplitMode::Natural,
            dir_bin_count: DEFAULT_DIR_BINS,
        }
    }

    #[test]
    fn zero_noise_features_sit_on_the_manifold() {
        let mut spec = base_spec(40);
        spec.noise_sigma = 0.0;
        let ds = generate(&spec).unwrap();
        let manifold = Manifold::new(spec.d_in, &spec.label_range, spec.manifold_seed);
        for i in 0..ds.len() {
            let expect = manifold.features(ds.labels[i]);
            let got = &ds.features.values()[i * spec.d_in..(i + 1) * spec.d_in];
            assert_eq!(got, expect.as_slice());
        }
        // Equal labels imply identical features.
        assert_eq!(
            manifold.features(ds.labels[0]),
            manifold.features(ds.labels[0])
        );
    }

    #[test]
    fn generate_is_bitwise_reproducible() {
        let spec = base_spec(64);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let mut other = spec.clone();
        other.sample_seed += 1;
        assert_ne!(generate(&spec).unwrap().labels, generate(&other).unwrap().labels);
    }

    #[test]
    fn uniform_label_deciles_are_balanced() {
        let mut spec = base_spec(10_000);
        spec.noise_sigma = 0.0;
        let ds = generate(&spec).unwrap();
        let mut counts = [0usize; 10];
        for &y in &ds.labels {
            assert!(spec.label_range.contains(y));
            counts[((y / 10.0) as usize).min(9)] += 1;
        }
        // Binomial(10^4, 0.1): 3 sigma = 90.
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - 1000.0).abs() <= 90.0,
                "decile {i} count {c} outside 3 sigma"
            );
        }
    }

    #[test]
    fn exponential_labels_match_truncated_pmf() {
        let rate = 0.03;
        let mut spec = base_spec(10_000);
        spec.noise_sigma = 0.0;
        spec.label_dist = LabelDist::Exponential { rate };
        let ds = generate(&spec).unwrap();
        let n = ds.len() as f64;
        let cdf = |y: f64| (1.0 - (-rate * y).exp()) / (1.0 - (-rate * 100.0f64).exp());
        let mut counts = [0usize; 10];
        for &y in &ds.labels {
            assert!(spec.label_range.contains(y));
            counts[((y / 10.0) as usize).min(9)] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let p = cdf((i as f64 + 1.0) * 10.0) - cdf(i as f64 * 10.0);
            let sigma = (n * p * (1.0 - p)).sqrt();
            assert!(
                (c as f64 - n * p).abs() <= 3.0 * sigma,
                "bin {i}: count {c}, expected {:.1} +- {:.1}",
                n * p,
                3.0 * sigma
            );
        }
    }

    #[test]
    fn mixture_labels_are_bimodal_and_in_range() {
        let mut spec = base_spec(10_000);
        spec.noise_sigma = 0.0;
        spec.label_dist = LabelDist::Mixture;
        let ds = generate(&spec).unwrap();
        let mut counts = [0usize; 10];
        for &y in &ds.labels {
            assert!(spec.label_range.contains(y));
            counts[((y / 10.0) as usize).min(9)] += 1;
        }
        // Peaks near 25 and 75; trough at the middle.
        assert!(counts[2] > counts[4] * 3);
        assert!(counts[7] > counts[4] * 3);
        // Roughly even halves.
        let low: usize = counts[..5].iter().sum();
        assert!((low as f64 - 5000.0).abs() <= 300.0, "low half {low}");
    }

    #[test]
    fn natural_split_sizes_and_disjointness() {
        let mut spec = base_spec(100);
        spec.split_mode = SplitMode::Natural;
        let ds = generate(&spec).unwrap();
        let (train, val, test) = split(&ds, &spec).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (80, 10, 10));
        let mut all: Vec<usize> = train
            .ids
            .iter()
            .chain(&val.ids)
            .chain(&test.ids)
            .copied()
            .collect();
        all.sort_unstable();
        let expect: Vec<usize> = (0..100).collect();
        assert_eq!(all, expect);
    }

    #[test]
    fn dir_split_balances_val_and_test_histograms() {
        let mut spec = base_spec(1000);
        spec.split_mode = SplitMode::Dir;
        let ds = generate(&spec).unwrap();
        let (train, val, test) = split(&ds, &spec).unwrap();
        assert_eq!(train.len() + val.len() + test.len(), 1000);
        for part in [&val, &test] {
            let mut counts = [0usize; 10];
            for &y in &part.labels {
                counts[((y / 10.0) as usize).min(9)] += 1;
            }
            let (lo, hi) = (
                counts.iter().min().copied().unwrap(),
                counts.iter().max().copied().unwrap(),
            );
            assert!(lo > 0 && hi as f64 / lo as f64 <= 2.0, "histogram {counts:?}");
        }
    }

    #[test]
    fn dir_split_without_bin_coverage_names_the_bin() {
        let mut spec = base_spec(200);
        spec.split_mode = SplitMode::Dir;
        let ds = generate(&spec).unwrap();
        // Crush every label into bin 0.
        let squashed = LabeledDataset {
            ids: ds.ids.clone(),
            labels: vec![3.0; ds.len()],
            features: ds.features.clone(),
        };
        match split(&squashed, &spec) {
            Err(DataError::InfeasibleBin { bin: 1, have: 0, .. }) => {}
            other => panic!("expected bin-1 infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn dir_split_with_tiny_quota_is_infeasible() {
        let mut spec = base_spec(50);
        spec.split_mode = SplitMode::Dir;
        let ds = generate(&spec).unwrap();
        // 10% of 50 = 5 < 10 bins.
        match split(&ds, &spec) {
            Err(DataError::InfeasibleQuota {
                split: "validation",
                quota: 5,
                bins: 10,
            }) => {}
            other => panic!("expected quota infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn identity_augmentation_stacks_two_copies() {
        let x = Tensor::new([2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let spec = AugmentSpec::new(0.0, 0.0, 5).unwrap();
        let out = augment_two_views(&x, &spec).unwrap();
        assert_eq!(out.shape(), &[4, 3]);
        assert_eq!(&out.values()[..6], x.values());
        assert_eq!(&out.values()[6..], x.values());
    }

    #[test]
    fn noisy_views_differ_from_each_other() {
        let x = Tensor::new([3, 4], vec![0.5; 12]).unwrap();
        let spec = AugmentSpec::new(0.1, 0.0, 5).unwrap();
        let out = augment_two_views(&x, &spec).unwrap();
        for i in 0..3 {
            let v1 = &out.values()[i * 4..(i + 1) * 4];
            let v2 = &out.values()[(i + 3) * 4..(i + 4) * 4];
            assert_ne!(v1, v2, "row {i} views identical");
        }
        // Same spec reproduces the same views.
        assert_eq!(out, augment_two_views(&x, &spec).unwrap());
    }

    #[test]
    fn dropout_fraction_is_near_p() {
        let x = Tensor::new([4, 1000], vec![1.0; 4000]).unwrap();
        let spec = AugmentSpec::new(0.0, 0.5, 9).unwrap();
        let out = augment_two_views(&x, &spec).unwrap();
        let zeros = out.values().iter().filter(|&&v| v == 0.0).count();
        // Binomial(8000, 0.5): 3 sigma ~ 134.
        assert!(
            (zeros as f64 - 4000.0).abs() <= 134.0,
            "zeroed {zeros} of 8000"
        );
    }

    #[test]
    fn augment_spec_validation() {
        assert!(AugmentSpec::new(-0.1, 0.0, 0).is_err());
        assert!(AugmentSpec::new(0.0, 1.0, 0).is_err());
        assert!(AugmentSpec::new(0.0, 0.99, 0).is_ok());
    }

    #[test]
    fn two_view_batches_give_every_anchor_a_positive() {
        let mut spec = base_spec(16);
        spec.noise_sigma = 0.0;
        let ds = generate(&spec).unwrap();
        let aug = AugmentSpec::new(0.05, 0.1, 3).unwrap();
        let x2 = augment_two_views(&ds.features, &aug).unwrap();
        assert_eq!(x2.rows(), 32);
        let mut labels2 = ds.labels.clone();
        labels2.extend_from_slice(&ds.labels);
        let pairs =
            build_pair_sets(&labels2, &BinConfig::unit_width(range100())).unwrap();
        assert!((0..32).all(|i| !pairs.positives[i].is_empty()));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let ds = generate(&base_spec(25)).unwrap();
        save_csv(&path, &ds).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn csv_rejects_malformed_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");

        std::fs::write(&path, "id,label,x0\n0,1.0,2.0\n").unwrap();
        assert!(matches!(
            load_csv(&path),
            Err(DataError::Malformed { line: 1, .. })
        ));

        std::fs::write(&path, "id,y,x0,x1\n0,1.0,2.0\n").unwrap();
        assert!(matches!(
            load_csv(&path),
            Err(DataError::Malformed { line: 2, .. })
        ));

        std::fs::write(&path, "id,y,x0\n0,1.0,abc\n").unwrap();
        assert!(matches!(
            load_csv(&path),
            Err(DataError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn spec_validation_rejects_bad_parameters() {
        let mut spec = base_spec(10);
        spec.label_dist = LabelDist::Exponential { rate: 0.0 };
        assert!(matches!(generate(&spec), Err(DataError::BadSpec { .. })));
        assert!(SplitFractions::new(0.5, 0.2, 0.2).is_err());
        assert!(SplitFractions::new(0.8, 0.1, 0.1).is_ok());
        let mut spec = base_spec(10);
        spec.noise_sigma = -1.0;
        assert!(matches!(generate(&spec), Err(DataError::BadSpec { .. })));
    }
}
