//! Versioned JSON run configuration.
//!
//! One file drives every command. All randomness flows from a single root
//! `seed` through named sub-streams (data manifold, data sampling, parameter
//! init, training order/augmentation), so paired runs that must share data
//! and initialization — vanilla vs. contrastive, sweep cells — get them by
//! sharing the root seed. Scale presets (`desk`, `paper`) fill every field;
//! a config file overrides presets, and CLI flags override the file.

use crate::data::{DataError, DatasetSpec, LabelDist, SplitFractions, SplitMode};
use crate::geometry::{GeometryError, LabelRange, SmoothingEps};
use crate::losses::{DenominatorMode, LossConfig, LossError, RegressionKind};
use crate::model::{Activation, HeadMode, ModelConfig, ModelError};
use crate::pairing::{BinConfig, BinMode, PairingError};
use crate::seeding::sub_seed;
use crate::train::{AdamConfig, TrainConfig, TrainError, TrainMode};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

/// Accepted value of the `version` field.
pub const CONFIG_VERSION: u32 = 1;

/// Smallest allowed gradient-check configuration count.
pub const MIN_GRADCHECK_CONFIGS: usize = 20;

/// Smallest allowed bound-check batch count.
pub const MIN_BOUNDCHECK_BATCHES: usize = 1000;

/// Sub-stream names hanging off the root seed. Fixed so that archived
/// configs reproduce runs bit for bit.
pub const STREAM_MANIFOLD: &str = "data-manifold";
pub const STREAM_SAMPLE: &str = "data-sample";
pub const STREAM_INIT: &str = "init";
pub const STREAM_TRAIN: &str = "train";
pub const STREAM_GEOMETRY: &str = "geometry";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config is missing the required `version` field")]
    MissingVersion,
    #[error("config version {got} is not supported (expected {want})")]
    BadVersion { got: u32, want: u32 },
    #[error("invalid configuration: {what}")]
    Invalid { what: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn invalid(what: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { what: what.into() }
}

/// Problem size preset: `desk` runs in minutes on a laptop, `paper` mirrors
/// full-study sizes (resolvable and archivable, not meant for quick runs).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

impl FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(format!("unknown scale {other:?} (expected desk or paper)")),
        }
    }
}

// ── file sections ─────────────────────────────────────────────────────────
//
// Every field is optional; absent fields fall back to the scale preset.
// Unknown keys are rejected everywhere so sweep typos fail loudly.

/// Copies `src.field` over `dst.field` wherever `src` has a value.
macro_rules! overlay {
    ($dst:expr, $src:expr, [$($f:ident),* $(,)?]) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistSection {
    /// One of `uniform`, `exponential`, `mixture`.
    pub kind: Option<String>,
    /// Rate of the truncated exponential; required when kind is exponential.
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n_samples: Option<usize>,
    pub d_in: Option<usize>,
    pub label_min: Option<f64>,
    pub label_max: Option<f64>,
    pub label_dist: Option<DistSection>,
    pub noise_sigma: Option<f64>,
    pub train_frac: Option<f64>,
    pub val_frac: Option<f64>,
    pub test_frac: Option<f64>,
    pub split_mode: Option<SplitMode>,
    /// Histogram bins for balanced splits and shot routing.
    pub dir_bins: Option<usize>,
}

impl DataSection {
    fn merged(mut self, over: &DataSection) -> DataSection {
        overlay!(
            self,
            over,
            [
                n_samples, d_in, label_min, label_max, label_dist, noise_sigma, train_frac,
                val_frac, test_frac, split_mode, dir_bins,
            ]
        );
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder_layers: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    pub proj_dim: Option<usize>,
    pub head_mode: Option<HeadMode>,
    pub predictor_on_normalized: Option<bool>,
}

impl ModelSection {
    fn merged(mut self, over: &ModelSection) -> ModelSection {
        overlay!(
            self,
            over,
            [encoder_layers, activation, proj_dim, head_mode, predictor_on_normalized]
        );
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr0: Option<f64>,
    pub lr_after_60: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub sigma_aug: Option<f64>,
    pub dropout_p: Option<f64>,
    pub mode: Option<TrainMode>,
    pub stage1_epochs: Option<usize>,
}

impl TrainSection {
    fn merged(mut self, over: &TrainSection) -> TrainSection {
        overlay!(
            self,
            over,
            [
                epochs, batch_size, lr0, lr_after_60, beta1, beta2, adam_eps, sigma_aug,
                dropout_p, mode, stage1_epochs,
            ]
        );
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinSection {
    /// One of `width`, `count`.
    pub kind: Option<String>,
    pub width: Option<f64>,
    pub count: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    /// Smoothing term inside the compensated-cosine square root.
    pub eps: Option<f64>,
    pub reg: Option<RegressionKind>,
    pub bin: Option<BinSection>,
    pub denominator: Option<DenominatorMode>,
}

impl LossSection {
    fn merged(mut self, over: &LossSection) -> LossSection {
        overlay!(self, over, [tau, gamma, eps, reg, bin, denominator]);
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreeSection {
    /// Labels to embed; two views per label. Defaults to 8 labels equispaced
    /// across the resolved label range.
    pub labels: Option<Vec<f64>>,
    pub dim: Option<usize>,
}

impl FreeSection {
    fn merged(mut self, over: &FreeSection) -> FreeSection {
        overlay!(self, over, [labels, dim]);
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub gammas: Option<Vec<f64>>,
    pub proj_dims: Option<Vec<usize>>,
}

impl SweepSection {
    fn merged(mut self, over: &SweepSection) -> SweepSection {
        overlay!(self, over, [gammas, proj_dims]);
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub configs: Option<usize>,
    pub tolerance: Option<f64>,
}

impl GradcheckSection {
    fn merged(mut self, over: &GradcheckSection) -> GradcheckSection {
        overlay!(self, over, [configs, tolerance]);
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundcheckSection {
    pub batches: Option<usize>,
}

impl BoundcheckSection {
    fn merged(mut self, over: &BoundcheckSection) -> BoundcheckSection {
        overlay!(self, over, [batches]);
        self
    }
}

/// The on-disk config. Also the archive format: resolving fills every field
/// and the effective config is written beside the run outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub version: Option<u32>,
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
    /// Train a second model with gamma = 0 on the same data and init, and
    /// report metric deltas in the summary.
    pub paired_vanilla: Option<bool>,
    pub data: Option<DataSection>,
    pub model: Option<ModelSection>,
    pub train: Option<TrainSection>,
    pub loss: Option<LossSection>,
    pub free: Option<FreeSection>,
    pub sweep: Option<SweepSection>,
    pub gradcheck: Option<GradcheckSection>,
    pub boundcheck: Option<BoundcheckSection>,
}

impl ConfigFile {
    /// Parse from JSON text; unknown keys anywhere are errors.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ConfigFile = serde_json::from_str(text)?;
        match cfg.version {
            None => Err(ConfigError::MissingVersion),
            Some(v) if v != CONFIG_VERSION => Err(ConfigError::BadVersion {
                got: v,
                want: CONFIG_VERSION,
            }),
            Some(_) => Ok(cfg),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    fn merged(self, over: &ConfigFile) -> ConfigFile {
        fn section<T: Clone>(base: Option<T>, over: &Option<T>, merge: impl Fn(T, &T) -> T) -> Option<T> {
            match (base, over) {
                (Some(b), Some(o)) => Some(merge(b, o)),
                (None, Some(o)) => Some(o.clone()),
                (b, None) => b,
            }
        }
        ConfigFile {
            version: Some(CONFIG_VERSION),
            seed: over.seed.or(self.seed),
            out_dir: over.out_dir.clone().or(self.out_dir),
            paired_vanilla: over.paired_vanilla.or(self.paired_vanilla),
            data: section(self.data, &over.data, DataSection::merged),
            model: section(self.model, &over.model, ModelSection::merged),
            train: section(self.train, &over.train, TrainSection::merged),
            loss: section(self.loss, &over.loss, LossSection::merged),
            free: section(self.free, &over.free, FreeSection::merged),
            sweep: section(self.sweep, &over.sweep, SweepSection::merged),
            gradcheck: section(self.gradcheck, &over.gradcheck, GradcheckSection::merged),
            boundcheck: section(self.boundcheck, &over.boundcheck, BoundcheckSection::merged),
        }
    }
}

/// Fully-populated defaults for one scale. Every field except the free
/// section is `Some`; free-mode defaults depend on the resolved label range.
pub fn preset(scale: Scale) -> ConfigFile {
    let (n_samples, d_in, encoder, proj_dim, epochs, batch, proj_dims) = match scale {
        Scale::Desk => (4000, 16, vec![64, 64], 16, 80, 64, vec![8, 16, 32]),
        Scale::Paper => (
            20_000,
            64,
            vec![256, 256],
            128,
            100,
            256,
            vec![64, 128, 256, 512, 1024],
        ),
    };
    ConfigFile {
        version: Some(CONFIG_VERSION),
        seed: Some(7),
        out_dir: Some("out".into()),
        paired_vanilla: Some(false),
        data: Some(DataSection {
            n_samples: Some(n_samples),
            d_in: Some(d_in),
            label_min: Some(0.0),
            label_max: Some(100.0),
            label_dist: Some(DistSection {
                kind: Some("exponential".into()),
                rate: Some(0.05),
            }),
            noise_sigma: Some(0.1),
            train_frac: Some(0.7),
            val_frac: Some(0.15),
            test_frac: Some(0.15),
            split_mode: Some(SplitMode::Natural),
            dir_bins: Some(10),
        }),
        model: Some(ModelSection {
            encoder_layers: Some(encoder),
            activation: Some(Activation::Relu),
            proj_dim: Some(proj_dim),
            head_mode: Some(HeadMode::Standard),
            predictor_on_normalized: Some(false),
        }),
        train: Some(TrainSection {
            epochs: Some(epochs),
            batch_size: Some(batch),
            lr0: Some(crate::train::DEFAULT_LR0),
            lr_after_60: Some(crate::train::DEFAULT_LR_AFTER_60),
            beta1: Some(0.9),
            beta2: Some(0.999),
            adam_eps: Some(1e-8),
            sigma_aug: Some(0.05),
            dropout_p: Some(0.1),
            mode: Some(TrainMode::Joint),
            stage1_epochs: Some(epochs / 2),
        }),
        loss: Some(LossSection {
            tau: Some(crate::losses::DEFAULT_TAU),
            gamma: Some(crate::losses::DEFAULT_GAMMA),
            eps: Some(crate::geometry::DEFAULT_EPS),
            reg: Some(RegressionKind::Mae),
            bin: Some(BinSection {
                kind: Some("width".into()),
                width: Some(1.0),
                count: None,
            }),
            denominator: Some(DenominatorMode::CompensatedNegatives),
        }),
        free: None,
        sweep: Some(SweepSection {
            gammas: Some(vec![0.01, 0.1, 1.0, 10.0, 100.0]),
            proj_dims: Some(proj_dims),
        }),
        gradcheck: Some(GradcheckSection {
            configs: Some(24),
            tolerance: Some(1e-4),
        }),
        boundcheck: Some(BoundcheckSection {
            batches: Some(MIN_BOUNDCHECK_BATCHES),
        }),
    }
}

// ── resolved run configuration ────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct FreeRun {
    pub labels: Vec<f64>,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub gammas: Vec<f64>,
    pub proj_dims: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckRun {
    pub configs: usize,
    pub tolerance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundcheckRun {
    pub batches: usize,
}

/// Everything a command needs, in core types, plus the effective config for
/// archiving. Sub-seeds are already fanned out from the root seed.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub paired_vanilla: bool,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub free: FreeRun,
    pub sweep: SweepGrid,
    pub gradcheck: GradcheckRun,
    pub boundcheck: BoundcheckRun,
    /// Fully-populated effective config; archived beside run outputs.
    pub archive: ConfigFile,
}

/// Precedence knobs that outrank the config file (CLI flags).
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
}

fn need<T: Clone>(v: &Option<T>, what: &str) -> Result<T, ConfigError> {
    v.clone().ok_or_else(|| invalid(format!("{what} is not set")))
}

/// Merge preset <- file <- CLI overrides and build core-type configs.
pub fn resolve(file: &ConfigFile, scale: Scale, over: &Overrides) -> Result<RunConfig, ConfigError> {
    let cli = ConfigFile {
        version: Some(CONFIG_VERSION),
        seed: over.seed,
        out_dir: over.out_dir.clone(),
        ..ConfigFile::default()
    };
    let mut eff = preset(scale).merged(file).merged(&cli);

    let seed = need(&eff.seed, "seed")?;
    let out_dir = PathBuf::from(need(&eff.out_dir, "out_dir")?);

    // data
    let d = eff.data.as_ref().expect("preset fills data");
    let range = LabelRange::new(need(&d.label_min, "data.label_min")?, need(&d.label_max, "data.label_max")?)?;
    let dist = d.label_dist.as_ref().expect("preset fills data.label_dist");
    let label_dist = match need(&dist.kind, "data.label_dist.kind")?.as_str() {
        "uniform" => LabelDist::Uniform,
        "exponential" => LabelDist::Exponential {
            rate: dist
                .rate
                .ok_or_else(|| invalid("data.label_dist.rate is required for kind exponential"))?,
        },
        "mixture" => LabelDist::Mixture,
        other => {
            return Err(invalid(format!(
                "data.label_dist.kind {other:?} (expected uniform, exponential, or mixture)"
            )))
        }
    };
    let split = SplitFractions::new(
        need(&d.train_frac, "data.train_frac")?,
        need(&d.val_frac, "data.val_frac")?,
        need(&d.test_frac, "data.test_frac")?,
    )?;
    let dataset = DatasetSpec {
        n_samples: need(&d.n_samples, "data.n_samples")?,
        d_in: need(&d.d_in, "data.d_in")?,
        label_range: range,
        label_dist,
        manifold_seed: sub_seed(seed, STREAM_MANIFOLD),
        sample_seed: sub_seed(seed, STREAM_SAMPLE),
        noise_sigma: need(&d.noise_sigma, "data.noise_sigma")?,
        split,
        split_mode: need(&d.split_mode, "data.split_mode")?,
        dir_bin_count: need(&d.dir_bins, "data.dir_bins")?,
    };
    dataset.validate()?;

    // model
    let m = eff.model.as_ref().expect("preset fills model");
    let mut model = ModelConfig::new(
        dataset.d_in,
        need(&m.encoder_layers, "model.encoder_layers")?,
        need(&m.activation, "model.activation")?,
        need(&m.proj_dim, "model.proj_dim")?,
        need(&m.head_mode, "model.head_mode")?,
        sub_seed(seed, STREAM_INIT),
    )?;
    model.predictor_on_normalized = need(&m.predictor_on_normalized, "model.predictor_on_normalized")?;

    // loss
    let l = eff.loss.as_ref().expect("preset fills loss");
    let bin_sec = l.bin.as_ref().expect("preset fills loss.bin");
    let bin_mode = match need(&bin_sec.kind, "loss.bin.kind")?.as_str() {
        "width" => BinMode::Width(
            bin_sec
                .width
                .ok_or_else(|| invalid("loss.bin.width is required for kind width"))?,
        ),
        "count" => BinMode::Count(
            bin_sec
                .count
                .ok_or_else(|| invalid("loss.bin.count is required for kind count"))?,
        ),
        other => {
            return Err(invalid(format!(
                "loss.bin.kind {other:?} (expected width or count)"
            )))
        }
    };
    let bin = BinConfig::new(range, bin_mode)?;
    let loss = LossConfig::new(
        need(&l.tau, "loss.tau")?,
        need(&l.gamma, "loss.gamma")?,
        SmoothingEps::new(need(&l.eps, "loss.eps")?)?,
        need(&l.reg, "loss.reg")?,
        bin,
    )?
    .with_denominator(need(&l.denominator, "loss.denominator")?);

    // train
    let t = eff.train.as_ref().expect("preset fills train");
    let train = TrainConfig {
        epochs: need(&t.epochs, "train.epochs")?,
        batch_size: need(&t.batch_size, "train.batch_size")?,
        lr0: need(&t.lr0, "train.lr0")?,
        lr_after_60: need(&t.lr_after_60, "train.lr_after_60")?,
        adam: AdamConfig {
            beta1: need(&t.beta1, "train.beta1")?,
            beta2: need(&t.beta2, "train.beta2")?,
            eps: need(&t.adam_eps, "train.adam_eps")?,
        },
        loss,
        sigma_aug: need(&t.sigma_aug, "train.sigma_aug")?,
        dropout_p: need(&t.dropout_p, "train.dropout_p")?,
        seed: sub_seed(seed, STREAM_TRAIN),
        mode: need(&t.mode, "train.mode")?,
        stage1_epochs: need(&t.stage1_epochs, "train.stage1_epochs")?,
    };
    train.validate()?;

    // free-embedding defaults span the resolved range
    let free_sec = eff.free.clone().unwrap_or_default();
    let labels = match free_sec.labels {
        Some(ls) => ls,
        None => equispaced(range, 8),
    };
    if labels.is_empty() {
        return Err(invalid("free.labels must not be empty"));
    }
    for &y in &labels {
        if !range.contains(y) {
            return Err(invalid(format!(
                "free label {y} is outside the label range [{}, {}]",
                range.y_min(),
                range.y_max()
            )));
        }
    }
    let free = FreeRun {
        labels,
        dim: free_sec.dim.unwrap_or(3),
    };
    if free.dim == 0 {
        return Err(invalid("free.dim must be >= 1"));
    }

    // sweep
    let s = eff.sweep.as_ref().expect("preset fills sweep");
    let sweep = SweepGrid {
        gammas: need(&s.gammas, "sweep.gammas")?,
        proj_dims: need(&s.proj_dims, "sweep.proj_dims")?,
    };
    if sweep.gammas.is_empty() || sweep.proj_dims.is_empty() {
        return Err(invalid("sweep.gammas and sweep.proj_dims must be nonempty"));
    }
    for &g in &sweep.gammas {
        if !(g.is_finite() && g >= 0.0) {
            return Err(invalid(format!("sweep gamma {g} must be finite and >= 0")));
        }
    }
    for &pd in &sweep.proj_dims {
        if pd < 2 {
            return Err(invalid(format!("sweep proj_dim {pd} must be >= 2")));
        }
    }

    // diagnostics
    let gc = eff.gradcheck.as_ref().expect("preset fills gradcheck");
    let gradcheck = GradcheckRun {
        configs: need(&gc.configs, "gradcheck.configs")?,
        tolerance: need(&gc.tolerance, "gradcheck.tolerance")?,
    };
    if gradcheck.configs < MIN_GRADCHECK_CONFIGS {
        return Err(invalid(format!(
            "gradcheck.configs must be >= {MIN_GRADCHECK_CONFIGS}, got {}",
            gradcheck.configs
        )));
    }
    if !(gradcheck.tolerance.is_finite() && gradcheck.tolerance > 0.0) {
        return Err(invalid("gradcheck.tolerance must be finite and > 0"));
    }
    let bc = eff.boundcheck.as_ref().expect("preset fills boundcheck");
    let boundcheck = BoundcheckRun {
        batches: need(&bc.batches, "boundcheck.batches")?,
    };
    if boundcheck.batches < MIN_BOUNDCHECK_BATCHES {
        return Err(invalid(format!(
            "boundcheck.batches must be >= {MIN_BOUNDCHECK_BATCHES}, got {}",
            boundcheck.batches
        )));
    }

    // Archive the effective config with derived free defaults filled in.
    eff.free = Some(FreeSection {
        labels: Some(free.labels.clone()),
        dim: Some(free.dim),
    });
    eff.out_dir = Some(out_dir.display().to_string());

    Ok(RunConfig {
        seed,
        out_dir,
        paired_vanilla: need(&eff.paired_vanilla, "paired_vanilla")?,
        dataset,
        model,
        train,
        free,
        sweep,
        gradcheck,
        boundcheck,
        archive: eff,
    })
}

fn equispaced(range: LabelRange, k: usize) -> Vec<f64> {
    let last = (k - 1) as f64;
    (0..k)
        .map(|i| range.y_min() + range.span() * (i as f64 / last))
        .collect()
}
