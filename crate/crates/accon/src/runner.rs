//! Command implementations behind the `accon` binary.
//!
//! Each command resolves one [`RunConfig`], writes its artifacts under the
//! configured output directory, and reports through a process exit code:
//! 0 success, 1 a check ran and failed, 2 input error, 3 numeric failure.
//! Primary outputs are deterministic for a fixed config and seed; wall-clock
//! measurements go to `timing.json` and the epoch log's `wall_ms` column,
//! never into summaries.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::Serialize;

use crate::config::{
    resolve, ConfigError, ConfigFile, Overrides, RunConfig, Scale, STREAM_GEOMETRY,
};
use crate::data::{generate, load_csv, save_csv, split, DataError, LabeledDataset};
use crate::geometry::{GeometryError, LabelRange};
use crate::gradcheck::{gradcheck, DEFAULT_STEP};
use crate::graph::GraphError;
use crate::losses::{
    accon_batch_loss, bound_diagnostics, combined_loss, regression_loss, LossConfig, LossError,
    RegressionKind,
};
use crate::metrics::{
    compute_metrics, geometry_report, shot_split_metrics, GeometryReport, MetricReport,
    MetricsError, ShotThresholds, DEFAULT_EPS_GM,
};
use crate::model::{
    forward, forward_graph, init_params, load_checkpoint, save_checkpoint, Activation, HeadMode,
    ModelConfig, ModelError, ModelParams, ParamNodes,
};
use crate::pairing::{build_pair_sets, PairingError};
use crate::seeding::{stream_rng, sub_seed};
use crate::tensor::Tensor;
use crate::textio::fmt_f64;
use crate::train::{
    fit, fit_free_embeddings, fit_two_stage, write_epoch_log, TrainError, TrainMode,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// Distance bins in embedding-geometry reports.
pub const GEOMETRY_BINS: usize = 10;

/// Caps sweep worker threads when set.
pub const THREADS_ENV: &str = "ACCON_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing input file {path} (generate the dataset first)")]
    MissingInput { path: PathBuf },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
}

impl RunnerError {
    /// Process exit code for this failure: 2 for anything wrong with inputs
    /// (config, files, specs, shapes), 3 for numbers going bad at runtime.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunnerError::Config(_)
            | RunnerError::MissingInput { .. }
            | RunnerError::Write { .. }
            | RunnerError::Data(_)
            | RunnerError::Geometry(_)
            | RunnerError::Pairing(_) => EXIT_INPUT,
            RunnerError::Model(e) => model_exit_code(e),
            RunnerError::Train(e) => train_exit_code(e),
            RunnerError::Loss(_)
            | RunnerError::Metrics(_)
            | RunnerError::Graph(_) => EXIT_NUMERIC,
        }
    }
}

fn model_exit_code(e: &ModelError) -> u8 {
    match e {
        ModelError::NonFiniteInput | ModelError::NonFiniteParam { .. } => EXIT_NUMERIC,
        ModelError::Graph(_) | ModelError::Tensor(_) => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

fn train_exit_code(e: &TrainError) -> u8 {
    match e {
        TrainError::NonFiniteLoss { .. } => EXIT_NUMERIC,
        TrainError::BadConfig { .. }
        | TrainError::EmptyTrainingSet
        | TrainError::TooSmallValidation { .. } => EXIT_INPUT,
        TrainError::Data(_) | TrainError::Pairing(_) | TrainError::Geometry(_) => EXIT_INPUT,
        TrainError::Model(m) => model_exit_code(m),
        TrainError::Loss(_)
        | TrainError::Graph(_)
        | TrainError::Metrics(_)
        | TrainError::Tensor(_) => EXIT_NUMERIC,
    }
}

// ── shared plumbing ───────────────────────────────────────────────────────

fn write_text(path: &Path, text: &str) -> Result<(), RunnerError> {
    fs::write(path, text).map_err(|source| RunnerError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn make_dir(path: &Path) -> Result<(), RunnerError> {
    fs::create_dir_all(path).map_err(|source| RunnerError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifact types serialize");
    s.push('\n');
    s
}

fn archive_config(dir: &Path, archive: &ConfigFile) -> Result<(), RunnerError> {
    write_text(&dir.join("config.json"), &archive.to_json())
}

fn load_split_csv(dir: &Path, name: &str) -> Result<LabeledDataset, RunnerError> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(RunnerError::MissingInput { path });
    }
    Ok(load_csv(&path)?)
}

/// Training-set frequency of each contrastive label bin; feeds shot routing.
fn label_histogram(labels: &[f64], cfg: &LossConfig) -> Result<Vec<usize>, RunnerError> {
    let mut hist = vec![0usize; cfg.bin.n_bins()];
    for &y in labels {
        hist[cfg.bin.bin_index(y)?] += 1;
    }
    Ok(hist)
}

#[derive(Serialize)]
struct TimingFile {
    wall_ms_total: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_ms_fit: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_ms_vanilla_fit: Option<u64>,
}

// ── gen-data ──────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct SplitCounts {
    train: usize,
    val: usize,
    test: usize,
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    version: u32,
    seed: u64,
    manifold_seed: u64,
    sample_seed: u64,
    data: &'a crate::config::DataSection,
    counts: SplitCounts,
    histogram_bins: usize,
    train_histogram: Vec<usize>,
    val_histogram: Vec<usize>,
    test_histogram: Vec<usize>,
}

/// Generate the dataset, split it, and write the three CSVs plus a manifest
/// recording seeds, spec, and per-split label histograms.
pub fn cmd_gen_data(rc: &RunConfig) -> Result<(), RunnerError> {
    make_dir(&rc.out_dir)?;
    archive_config(&rc.out_dir, &rc.archive)?;

    let data = generate(&rc.dataset)?;
    let (train, val, test) = split(&data, &rc.dataset)?;
    save_csv(&rc.out_dir.join("train.csv"), &train)?;
    save_csv(&rc.out_dir.join("val.csv"), &val)?;
    save_csv(&rc.out_dir.join("test.csv"), &test)?;

    let bins = crate::pairing::BinConfig::new(
        rc.dataset.label_range,
        crate::pairing::BinMode::Count(rc.dataset.dir_bin_count),
    )?;
    let hist = |ds: &LabeledDataset| -> Result<Vec<usize>, RunnerError> {
        let mut h = vec![0usize; bins.n_bins()];
        for &y in &ds.labels {
            h[bins.bin_index(y)?] += 1;
        }
        Ok(h)
    };
    let manifest = ManifestFile {
        version: 1,
        seed: rc.seed,
        manifold_seed: rc.dataset.manifold_seed,
        sample_seed: rc.dataset.sample_seed,
        data: rc.archive.data.as_ref().expect("resolved config has data"),
        counts: SplitCounts {
            train: train.len(),
            val: val.len(),
            test: test.len(),
        },
        histogram_bins: bins.n_bins(),
        train_histogram: hist(&train)?,
        val_histogram: hist(&val)?,
        test_histogram: hist(&test)?,
    };
    write_text(&rc.out_dir.join("manifest.json"), &to_json(&manifest))?;
    println!(
        "gen-data: {} samples -> {} train / {} val / {} test under {}",
        data.len(),
        train.len(),
        val.len(),
        test.len(),
        rc.out_dir.display()
    );
    Ok(())
}

// ── train ─────────────────────────────────────────────────────────────────

#[derive(Clone, Serialize)]
struct VanillaBlock {
    test: MetricReport,
    geometry_pearson: Option<f64>,
    /// Contrastive-model test MAE minus vanilla test MAE; negative favors
    /// the contrastive run.
    delta_test_mae: f64,
    /// Contrastive geometry Pearson minus vanilla; negative means the
    /// contrastive embedding tracks label distance more tightly.
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_geometry_pearson: Option<f64>,
}

#[derive(Serialize)]
struct TrainSummaryFile<'a> {
    version: u32,
    mode: TrainMode,
    gamma: f64,
    epochs: usize,
    best_epoch: usize,
    best_val: &'a MetricReport,
    test: &'a MetricReport,
    geometry: &'a GeometryReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    paired_vanilla: Option<&'a VanillaBlock>,
}

/// Everything one supervised training run produced, for summaries and sweep
/// rows.
struct TrainOutcome {
    best_epoch: usize,
    best_val: MetricReport,
    test: MetricReport,
    geometry: GeometryReport,
}

fn evaluate_on(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    ds: &LabeledDataset,
) -> Result<(Vec<f64>, Tensor), RunnerError> {
    let out = forward(params, &ds.features, model_cfg)?;
    Ok((out.y_hat.values().to_vec(), out.z_tilde))
}

/// One supervised fit (joint or two-stage) with all its artifacts: archived
/// config, epoch log, checkpoints, geometry CSV, summary, timing.
fn run_training(
    rc: &RunConfig,
    train: &LabeledDataset,
    val: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<TrainOutcome, RunnerError> {
    make_dir(&rc.out_dir)?;
    archive_config(&rc.out_dir, &rc.archive)?;
    let started = Instant::now();

    let fit_started = Instant::now();
    let result = match rc.train.mode {
        TrainMode::Joint => fit(&rc.model, &rc.train, train, val)?,
        TrainMode::TwoStage => fit_two_stage(&rc.model, &rc.train, train, val)?,
        TrainMode::FreeEmbedding => {
            unreachable!("free-embedding runs go through run_free")
        }
    };
    let fit_ms = fit_started.elapsed().as_millis() as u64;

    write_epoch_log(&rc.out_dir.join("epochs.csv"), &result.records).map_err(|source| {
        RunnerError::Write {
            path: rc.out_dir.join("epochs.csv"),
            source,
        }
    })?;
    save_checkpoint(&rc.out_dir.join("checkpoint_best.json"), &rc.model, &result.best_params)?;
    save_checkpoint(&rc.out_dir.join("checkpoint_final.json"), &rc.model, &result.final_params)?;

    let (val_pred, _) = evaluate_on(&result.best_params, &rc.model, val)?;
    let best_val = compute_metrics(&val_pred, &val.labels, DEFAULT_EPS_GM)?;

    let train_hist = label_histogram(&train.labels, &rc.train.loss)?;
    let (test_pred, test_z) = evaluate_on(&result.best_params, &rc.model, test)?;
    let test_report = shot_split_metrics(
        &test_pred,
        &test.labels,
        &train_hist,
        &rc.train.loss.bin,
        ShotThresholds::default(),
        DEFAULT_EPS_GM,
    )?;
    let geometry = geometry_report(
        &test_z,
        &test.labels,
        rc.train.loss.bin.range(),
        GEOMETRY_BINS,
        sub_seed(rc.seed, STREAM_GEOMETRY),
    )?;
    crate::metrics::write_geometry_csv(&rc.out_dir.join("geometry.csv"), &geometry).map_err(
        |source| RunnerError::Write {
            path: rc.out_dir.join("geometry.csv"),
            source,
        },
    )?;

    // Paired comparison: same data, same init and order streams, gamma = 0.
    let mut vanilla_block = None;
    let mut vanilla_fit_ms = None;
    if rc.paired_vanilla && rc.train.loss.gamma != 0.0 {
        let mut vcfg = rc.train.clone();
        vcfg.loss.gamma = 0.0;
        vcfg.mode = TrainMode::Joint;
        let v_started = Instant::now();
        let vfit = fit(&rc.model, &vcfg, train, val)?;
        vanilla_fit_ms = Some(v_started.elapsed().as_millis() as u64);
        write_epoch_log(&rc.out_dir.join("epochs_vanilla.csv"), &vfit.records).map_err(
            |source| RunnerError::Write {
                path: rc.out_dir.join("epochs_vanilla.csv"),
                source,
            },
        )?;
        let (v_pred, v_z) = evaluate_on(&vfit.best_params, &rc.model, test)?;
        let v_test = shot_split_metrics(
            &v_pred,
            &test.labels,
            &train_hist,
            &rc.train.loss.bin,
            ShotThresholds::default(),
            DEFAULT_EPS_GM,
        )?;
        let v_geometry = geometry_report(
            &v_z,
            &test.labels,
            rc.train.loss.bin.range(),
            GEOMETRY_BINS,
            sub_seed(rc.seed, STREAM_GEOMETRY),
        )?;
        vanilla_block = Some(VanillaBlock {
            delta_test_mae: test_report.mae - v_test.mae,
            delta_geometry_pearson: match (geometry.pearson, v_geometry.pearson) {
                (Some(a), Some(v)) => Some(a - v),
                _ => None,
            },
            geometry_pearson: v_geometry.pearson,
            test: v_test,
        });
    }

    let summary = TrainSummaryFile {
        version: 1,
        mode: rc.train.mode,
        gamma: rc.train.loss.gamma,
        epochs: rc.train.epochs,
        best_epoch: result.best_epoch,
        best_val: &best_val,
        test: &test_report,
        geometry: &geometry,
        paired_vanilla: vanilla_block.as_ref(),
    };
    write_text(&rc.out_dir.join("summary.json"), &to_json(&summary))?;
    let timing = TimingFile {
        wall_ms_total: started.elapsed().as_millis() as u64,
        wall_ms_fit: Some(fit_ms),
        wall_ms_vanilla_fit: vanilla_fit_ms,
    };
    write_text(&rc.out_dir.join("timing.json"), &to_json(&timing))?;

    Ok(TrainOutcome {
        best_epoch: result.best_epoch,
        best_val,
        test: test_report,
        geometry,
    })
}

#[derive(Serialize)]
struct FreeSummaryFile {
    version: u32,
    mode: TrainMode,
    steps: usize,
    dim: usize,
    n_labels: usize,
    final_loss: f64,
    first_alignment: f64,
    final_alignment: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    geometry: Option<GeometryReport>,
}

/// Free-embedding run: optimize raw unit vectors, log the per-step loss and
/// angle-alignment trace, and export the final embeddings.
fn run_free(rc: &RunConfig) -> Result<(), RunnerError> {
    make_dir(&rc.out_dir)?;
    archive_config(&rc.out_dir, &rc.archive)?;
    let started = Instant::now();

    let result = fit_free_embeddings(&rc.free.labels, rc.free.dim, &rc.train)?;

    let mut trace = String::from("step,loss,alignment\n");
    for (i, (l, a)) in result.loss.iter().zip(&result.alignment).enumerate() {
        trace.push_str(&format!("{},{},{}\n", i + 1, fmt_f64(*l), fmt_f64(*a)));
    }
    write_text(&rc.out_dir.join("free_trace.csv"), &trace)?;

    let mut y2 = rc.free.labels.clone();
    y2.extend_from_slice(&rc.free.labels);
    let d = result.embeddings.cols();
    let mut emb = String::from("label");
    for k in 0..d {
        emb.push_str(&format!(",z{k}"));
    }
    emb.push('\n');
    for (i, &y) in y2.iter().enumerate() {
        emb.push_str(&fmt_f64(y));
        for k in 0..d {
            emb.push_str(&format!(",{}", fmt_f64(result.embeddings.get(i, k))));
        }
        emb.push('\n');
    }
    write_text(&rc.out_dir.join("embeddings.csv"), &emb)?;

    let distinct = y2.iter().any(|&y| y != y2[0]);
    let geometry = if distinct {
        Some(geometry_report(
            &result.embeddings,
            &y2,
            rc.train.loss.bin.range(),
            GEOMETRY_BINS,
            sub_seed(rc.seed, STREAM_GEOMETRY),
        )?)
    } else {
        None
    };
    let summary = FreeSummaryFile {
        version: 1,
        mode: TrainMode::FreeEmbedding,
        steps: result.loss.len(),
        dim: rc.free.dim,
        n_labels: rc.free.labels.len(),
        final_loss: *result.loss.last().expect("at least one step"),
        first_alignment: *result.alignment.first().expect("at least one step"),
        final_alignment: *result.alignment.last().expect("at least one step"),
        geometry,
    };
    write_text(&rc.out_dir.join("summary.json"), &to_json(&summary))?;
    let timing = TimingFile {
        wall_ms_total: started.elapsed().as_millis() as u64,
        wall_ms_fit: None,
        wall_ms_vanilla_fit: None,
    };
    write_text(&rc.out_dir.join("timing.json"), &to_json(&timing))?;
    Ok(())
}

/// Train per the configured mode on the CSVs in the output directory.
pub fn cmd_train(rc: &RunConfig) -> Result<(), RunnerError> {
    if rc.train.mode == TrainMode::FreeEmbedding {
        run_free(rc)?;
        println!("train: free-embedding run complete under {}", rc.out_dir.display());
        return Ok(());
    }
    let train = load_split_csv(&rc.out_dir, "train.csv")?;
    let val = load_split_csv(&rc.out_dir, "val.csv")?;
    let test = load_split_csv(&rc.out_dir, "test.csv")?;
    let outcome = run_training(rc, &train, &val, &test)?;
    println!(
        "train: best epoch {} val MAE {:.4} test MAE {:.4} under {}",
        outcome.best_epoch,
        outcome.best_val.mae,
        outcome.test.mae,
        rc.out_dir.display()
    );
    Ok(())
}

// ── eval ──────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct EvalFile<'a> {
    version: u32,
    checkpoint: &'a str,
    n_test: usize,
    metrics: MetricReport,
    geometry: GeometryReport,
}

/// Re-score the best checkpoint on the test CSV. Shot routing is included
/// when the training CSV is still present.
pub fn cmd_eval(rc: &RunConfig) -> Result<(), RunnerError> {
    let ckpt_path = rc.out_dir.join("checkpoint_best.json");
    if !ckpt_path.exists() {
        return Err(RunnerError::MissingInput { path: ckpt_path });
    }
    let (model_cfg, params) = load_checkpoint(&ckpt_path)?;
    let test = load_split_csv(&rc.out_dir, "test.csv")?;

    let (pred, z) = evaluate_on(&params, &model_cfg, &test)?;
    let metrics = if rc.out_dir.join("train.csv").exists() {
        let train = load_split_csv(&rc.out_dir, "train.csv")?;
        let hist = label_histogram(&train.labels, &rc.train.loss)?;
        shot_split_metrics(
            &pred,
            &test.labels,
            &hist,
            &rc.train.loss.bin,
            ShotThresholds::default(),
            DEFAULT_EPS_GM,
        )?
    } else {
        compute_metrics(&pred, &test.labels, DEFAULT_EPS_GM)?
    };
    let geometry = geometry_report(
        &z,
        &test.labels,
        rc.train.loss.bin.range(),
        GEOMETRY_BINS,
        sub_seed(rc.seed, STREAM_GEOMETRY),
    )?;
    let eval = EvalFile {
        version: 1,
        checkpoint: "checkpoint_best.json",
        n_test: test.len(),
        metrics,
        geometry,
    };
    write_text(&rc.out_dir.join("eval.json"), &to_json(&eval))?;
    println!(
        "eval: {} test samples, MAE {:.4}, under {}",
        test.len(),
        eval.metrics.mae,
        rc.out_dir.display()
    );
    Ok(())
}

// ── gradcheck ─────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct WorstCoordinate {
    config: usize,
    param: String,
    coord: usize,
    analytic: f64,
    numeric: f64,
}

#[derive(Serialize)]
struct GradcheckFile {
    version: u32,
    configs: usize,
    tolerance: f64,
    max_rel_err: f64,
    all_passed: bool,
    worst: WorstCoordinate,
}

/// One random small full-pipeline configuration for finite differences.
/// Everything is kept smooth: tanh activations avoid relu kinks within a
/// probe step, and squared-error regression avoids the absolute-value kink.
struct GradcheckCase {
    model: ModelConfig,
    loss: LossConfig,
    range: LabelRange,
    x: Tensor,
    labels: Vec<f64>,
}

fn sample_gradcheck_case(seed: u64, index: usize) -> GradcheckCase {
    let mut rng = stream_rng(seed, &format!("gradcheck-{index}"));
    let n_labels = rng.gen_range(1..=4usize); // two views: 2N <= 8 rows
    let d_in = rng.gen_range(1..=6usize);
    let proj_dim = rng.gen_range(2..=4usize);
    let hidden: Vec<usize> = if rng.gen_bool(0.5) {
        vec![rng.gen_range(2..=5usize)]
    } else {
        vec![]
    };
    let head_mode = *[HeadMode::Standard, HeadMode::BeforeProj, HeadMode::NoProj]
        .choose(&mut rng)
        .expect("nonempty");
    let model = ModelConfig::new(
        d_in,
        hidden,
        Activation::Tanh,
        proj_dim,
        head_mode,
        rng.gen(),
    )
    .expect("sampled model config is valid");

    let range = LabelRange::new(0.0, 10.0).expect("fixed range");
    let tau = if index % 2 == 0 { 0.05 } else { 1.0 };
    let gamma = rng.gen_range(0.3..3.0);
    let loss = LossConfig::new(
        tau,
        gamma,
        crate::geometry::SmoothingEps::new(1e-6).expect("valid eps"),
        RegressionKind::Mse,
        crate::pairing::BinConfig::unit_width(range),
    )
    .expect("sampled loss config is valid");

    let uni = Uniform::new(-1.0f64, 1.0);
    let mut labels: Vec<f64> = (0..n_labels).map(|_| rng.gen_range(0.0..10.0)).collect();
    let twice = labels.clone();
    labels.extend(twice);
    let rows = labels.len();
    let x = Tensor::new(
        [rows, d_in],
        (0..rows * d_in).map(|_| uni.sample(&mut rng)).collect(),
    )
    .expect("input shape");
    GradcheckCase {
        model,
        loss,
        range,
        x,
        labels,
    }
}

fn rebuild_param_nodes(n_encoder: usize, has_proj: bool, ids: &[crate::graph::NodeId]) -> ParamNodes {
    let mut it = ids.iter().copied();
    let mut take = || it.next().expect("id list matches parameter layout");
    let encoder = (0..n_encoder).map(|_| (take(), take())).collect();
    let proj = if has_proj { Some((take(), take())) } else { None };
    ParamNodes {
        encoder,
        proj,
        predictor: take(),
    }
}

/// Check the analytic gradient of the full combined loss (regression plus
/// weighted contrastive term, through encoder, projection, normalization,
/// and predictor) against central finite differences on random small
/// configurations.
pub fn cmd_gradcheck(rc: &RunConfig) -> Result<bool, RunnerError> {
    make_dir(&rc.out_dir)?;
    archive_config(&rc.out_dir, &rc.archive)?;
    let started = Instant::now();

    let mut max_rel_err = 0.0f64;
    let mut worst = WorstCoordinate {
        config: 0,
        param: String::new(),
        coord: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..rc.gradcheck.configs {
        let case = sample_gradcheck_case(rc.seed, i);
        let params = init_params(&case.model)?;
        let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
        let names = params.names();
        let n_encoder = case.model.encoder_layers.len();
        let has_proj = params.proj.is_some();
        let pairs = build_pair_sets(&case.labels, &case.loss.bin)?;
        let y = Tensor::new([case.labels.len()], case.labels.clone()).expect("label shape");

        let report = gradcheck(&tensors, DEFAULT_STEP, |g, ids| {
            let nodes = rebuild_param_nodes(n_encoder, has_proj, ids);
            let x_id = g.leaf(case.x.clone());
            let f = forward_graph(g, &nodes, x_id, &case.model)?;
            let y_id = g.leaf(y.clone());
            let reg = regression_loss(g, f.y_hat, y_id, case.loss.reg)
                .expect("sampled case satisfies the loss contract");
            let accon = accon_batch_loss(g, f.z_tilde, &case.labels, &pairs, &case.loss, &case.range)
                .expect("sampled case satisfies the loss contract");
            Ok(combined_loss(g, reg, accon, case.loss.gamma).expect("sampled gamma is valid"))
        })?;
        if report.max_rel_err > max_rel_err || i == 0 {
            max_rel_err = report.max_rel_err;
            worst = WorstCoordinate {
                config: i,
                param: names[report.worst_param].clone(),
                coord: report.worst_coord,
                analytic: report.worst_analytic,
                numeric: report.worst_numeric,
            };
        }
    }

    let all_passed = max_rel_err.is_finite() && max_rel_err <= rc.gradcheck.tolerance;
    let file = GradcheckFile {
        version: 1,
        configs: rc.gradcheck.configs,
        tolerance: rc.gradcheck.tolerance,
        max_rel_err,
        all_passed,
        worst,
    };
    write_text(&rc.out_dir.join("gradcheck.json"), &to_json(&file))?;
    println!(
        "gradcheck: max relative error {:.3e} over {} configurations (tolerance {:.1e}) in {} ms -> {}",
        file.max_rel_err,
        file.configs,
        file.tolerance,
        started.elapsed().as_millis(),
        if all_passed { "PASS" } else { "FAIL" }
    );
    if !all_passed {
        println!(
            "gradcheck: worst coordinate is {}[{}] in configuration {}: analytic {} vs numeric {}",
            file.worst.param, file.worst.coord, file.worst.config, file.worst.analytic,
            file.worst.numeric
        );
    }
    Ok(all_passed)
}

// ── boundcheck ────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct BoundcheckFile {
    version: u32,
    batches: usize,
    intermediate_ok_all: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_violation_batch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_violation_batch_seed: Option<u64>,
    stated_pass_fraction: f64,
    derived_pass_fraction: f64,
    batches_with_margins: usize,
}

/// Survey the per-anchor intermediate inequality (hard requirement) and both
/// closed-form lower-bound variants (reported, not asserted) over random
/// batches of unit embeddings.
pub fn cmd_boundcheck(rc: &RunConfig) -> Result<bool, RunnerError> {
    make_dir(&rc.out_dir)?;
    archive_config(&rc.out_dir, &rc.archive)?;
    let started = Instant::now();
    let range = *rc.train.loss.bin.range();

    let mut stated = 0usize;
    let mut derived = 0usize;
    let mut with_margins = 0usize;
    let mut first_violation: Option<(usize, u64)> = None;
    for b in 0..rc.boundcheck.batches {
        let stream = format!("boundcheck-{b}");
        let batch_seed = sub_seed(rc.seed, &stream);
        let mut rng = stream_rng(rc.seed, &stream);

        let rows = rng.gen_range(2..=16usize);
        let d = rng.gen_range(2..=6usize);
        // A few distinct label values shared across rows so positives exist.
        let k = rng.gen_range(1..=rows.div_ceil(2));
        let values: Vec<f64> = (0..k)
            .map(|_| rng.gen_range(range.y_min()..range.y_max()))
            .collect();
        let labels: Vec<f64> = (0..rows)
            .map(|_| *values.choose(&mut rng).expect("nonempty"))
            .collect();
        let mut z = Tensor::zeros(vec![rows, d]);
        for v in z.values_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for r in 0..rows {
            let slice = &mut z.values_mut()[r * d..(r + 1) * d];
            let norm = slice.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in slice.iter_mut() {
                *v /= norm;
            }
        }

        let pairs = build_pair_sets(&labels, &rc.train.loss.bin)?;
        let report = bound_diagnostics(&z, &labels, &pairs, &rc.train.loss, &range)?;
        if !report.per_anchor_margins.is_empty() {
            with_margins += 1;
        }
        if !report.intermediate_ok && first_violation.is_none() {
            first_violation = Some((b, batch_seed));
        }
        if report.stated_ok {
            stated += 1;
        }
        if report.derived_ok {
            derived += 1;
        }
    }

    let total = rc.boundcheck.batches as f64;
    let file = BoundcheckFile {
        version: 1,
        batches: rc.boundcheck.batches,
        intermediate_ok_all: first_violation.is_none(),
        first_violation_batch: first_violation.map(|(b, _)| b),
        first_violation_batch_seed: first_violation.map(|(_, s)| s),
        stated_pass_fraction: stated as f64 / total,
        derived_pass_fraction: derived as f64 / total,
        batches_with_margins: with_margins,
    };
    write_text(&rc.out_dir.join("boundcheck.json"), &to_json(&file))?;
    println!(
        "boundcheck: {} batches in {} ms; intermediate inequality {}; stated-bound pass fraction {:.3}, derived-bound pass fraction {:.3}",
        file.batches,
        started.elapsed().as_millis(),
        if file.intermediate_ok_all { "held on every batch" } else { "VIOLATED" },
        file.stated_pass_fraction,
        file.derived_pass_fraction,
    );
    if let Some((b, s)) = first_violation {
        println!("boundcheck: first violation at batch {b} (batch seed {s:#018x})");
    }
    Ok(first_violation.is_none())
}

// ── sweep ─────────────────────────────────────────────────────────────────

/// Derive one sweep cell's run config: same root seed (shared data and init
/// streams), its own gamma and projection width, its own subdirectory.
fn cell_config(rc: &RunConfig, gamma: f64, proj_dim: usize) -> RunConfig {
    let mut cell = rc.clone();
    cell.train.loss.gamma = gamma;
    cell.model.proj_dim = proj_dim;
    cell.paired_vanilla = false;
    cell.out_dir = rc.out_dir.join("cells").join(format!("g{gamma}_d{proj_dim}"));
    if let Some(loss) = cell.archive.loss.as_mut() {
        loss.gamma = Some(gamma);
    }
    if let Some(model) = cell.archive.model.as_mut() {
        model.proj_dim = Some(proj_dim);
    }
    cell.archive.paired_vanilla = Some(false);
    cell.archive.out_dir = Some(cell.out_dir.display().to_string());
    cell
}

fn sweep_threads(cells: usize) -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(available);
    cap.min(cells).max(1)
}

fn csv_safe(msg: &str) -> String {
    msg.replace(['\n', '\r'], " ").replace(',', ";")
}

/// Train one model per (gamma, projection width) grid cell on a shared
/// dataset, one CSV row per cell. Cell failures are recorded in the row and
/// the sweep continues; any failed cell makes the command exit 1.
pub fn cmd_sweep(rc: &RunConfig) -> Result<bool, RunnerError> {
    if rc.train.mode == TrainMode::FreeEmbedding {
        return Err(ConfigError::Invalid {
            what: "sweep requires a model training mode (joint or two_stage)".into(),
        }
        .into());
    }
    make_dir(&rc.out_dir)?;
    archive_config(&rc.out_dir, &rc.archive)?;

    let data = generate(&rc.dataset)?;
    let (train, val, test) = split(&data, &rc.dataset)?;

    let mut cells = Vec::new();
    for &pd in &rc.sweep.proj_dims {
        for &g in &rc.sweep.gammas {
            cells.push((g, pd));
        }
    }
    let results: Mutex<Vec<Option<Result<TrainOutcome, RunnerError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let threads = sweep_threads(cells.len());

    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let (gamma, pd) = cells[i];
                let cell = cell_config(rc, gamma, pd);
                let outcome = run_training(&cell, &train, &val, &test);
                results.lock().expect("no worker panicked")[i] = Some(outcome);
            });
        }
    });

    let results = results.into_inner().expect("workers finished");
    let mut csv = String::from(
        "gamma,proj_dim,status,best_epoch,val_mae,test_mae,test_mse,test_gm,test_r2,test_pearson,geometry_pearson,detail\n",
    );
    let mut failures = 0usize;
    for ((gamma, pd), slot) in cells.iter().zip(results) {
        let res = slot.expect("every cell ran");
        match res {
            Ok(o) => {
                let gp = o.geometry.pearson.map(fmt_f64).unwrap_or_default();
                csv.push_str(&format!(
                    "{},{},ok,{},{},{},{},{},{},{},{},\n",
                    gamma,
                    pd,
                    o.best_epoch,
                    fmt_f64(o.best_val.mae),
                    fmt_f64(o.test.mae),
                    fmt_f64(o.test.mse),
                    fmt_f64(o.test.gm),
                    fmt_f64(o.test.r2),
                    fmt_f64(o.test.pearson),
                    gp,
                ));
            }
            Err(e) => {
                failures += 1;
                csv.push_str(&format!(
                    "{},{},error,,,,,,,,,{}\n",
                    gamma,
                    pd,
                    csv_safe(&e.to_string())
                ));
            }
        }
    }
    write_text(&rc.out_dir.join("sweep.csv"), &csv)?;
    println!(
        "sweep: {} cells ({} failed) across {} thread(s) under {}",
        cells.len(),
        failures,
        threads,
        rc.out_dir.display()
    );
    Ok(failures == 0)
}

// ── dispatcher ────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Eval,
    Gradcheck,
    Boundcheck,
    Sweep,
}

fn dispatch(
    cmd: Command,
    config_path: &Path,
    scale: Scale,
    over: &Overrides,
) -> Result<bool, RunnerError> {
    let file = ConfigFile::load(config_path)?;
    let rc = resolve(&file, scale, over)?;
    match cmd {
        Command::GenData => cmd_gen_data(&rc).map(|()| true),
        Command::Train => cmd_train(&rc).map(|()| true),
        Command::Eval => cmd_eval(&rc).map(|()| true),
        Command::Gradcheck => cmd_gradcheck(&rc),
        Command::Boundcheck => cmd_boundcheck(&rc),
        Command::Sweep => cmd_sweep(&rc),
    }
}

/// Load, resolve, run, and map the outcome to a process exit code.
pub fn run(cmd: Command, config_path: &Path, scale: Scale, over: &Overrides) -> u8 {
    match dispatch(cmd, config_path, scale, over) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CONFIG_VERSION;
    use std::collections::BTreeMap;

    fn resolve_json(json: &str, dir: &Path) -> RunConfig {
        let file = ConfigFile::from_json(json).unwrap();
        let over = Overrides {
            seed: None,
            out_dir: Some(dir.display().to_string()),
        };
        resolve(&file, Scale::Desk, &over).unwrap()
    }

    /// Small, smooth, and fast: tanh avoids dead all-zero embeddings that the
    /// tiny 8-unit relu encoder would produce, and dropout stays off so no
    /// row can be zeroed wholesale.
    fn tiny_train_json(extra: &str) -> String {
        format!(
            r#"{{
                "version": {CONFIG_VERSION},
                "seed": 11,
                "data": {{"n_samples": 100, "d_in": 3, "noise_sigma": 0.05}},
                "model": {{"encoder_layers": [8], "proj_dim": 4, "activation": "tanh"}},
                "train": {{"epochs": 2, "batch_size": 32, "lr0": 0.005, "lr_after_60": 0.002,
                           "sigma_aug": 0.02, "dropout_p": 0.0}},
                "loss": {{"bin": {{"kind": "count", "count": 10}}}}
                {extra}
            }}"#
        )
    }

    fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let key = path.strip_prefix(dir).unwrap().display().to_string();
                    out.insert(key, fs::read(&path).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn exit_codes_partition_failure_kinds() {
        let config_err: RunnerError = ConfigError::MissingVersion.into();
        assert_eq!(config_err.exit_code(), EXIT_INPUT);
        let missing = RunnerError::MissingInput {
            path: PathBuf::from("x"),
        };
        assert_eq!(missing.exit_code(), EXIT_INPUT);
        let infeasible: RunnerError = DataError::InfeasibleBin {
            bin: 3,
            have: 1,
            need: 2,
        }
        .into();
        assert_eq!(infeasible.exit_code(), EXIT_INPUT);
        let diverged: RunnerError = TrainError::NonFiniteLoss {
            epoch: 1,
            batch: 0,
            reg: f64::NAN,
            accon: 0.0,
        }
        .into();
        assert_eq!(diverged.exit_code(), EXIT_NUMERIC);
        let non_unit: RunnerError = LossError::NonUnitRow { row: 0, norm: 0.0 }.into();
        assert_eq!(non_unit.exit_code(), EXIT_NUMERIC);
        let bad_cfg: RunnerError = TrainError::BadConfig {
            what: "epochs".into(),
        }
        .into();
        assert_eq!(bad_cfg.exit_code(), EXIT_INPUT);
    }

    #[test]
    fn gen_data_writes_splits_and_a_consistent_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let rc = resolve_json(&tiny_train_json(""), dir.path());
        cmd_gen_data(&rc).unwrap();

        for name in ["config.json", "train.csv", "val.csv", "test.csv", "manifest.json"] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        let counts = &manifest["counts"];
        let total = counts["train"].as_u64().unwrap()
            + counts["val"].as_u64().unwrap()
            + counts["test"].as_u64().unwrap();
        assert_eq!(total, 100);
        let hist_sum: u64 = manifest["train_histogram"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap())
            .sum();
        assert_eq!(hist_sum, counts["train"].as_u64().unwrap());
        assert_eq!(
            manifest["train_histogram"].as_array().unwrap().len(),
            manifest["histogram_bins"].as_u64().unwrap() as usize
        );
    }

    #[test]
    fn gen_data_reruns_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let rc = resolve_json(&tiny_train_json(""), dir.path());
        cmd_gen_data(&rc).unwrap();
        let first = snapshot(dir.path());
        cmd_gen_data(&rc).unwrap();
        assert_eq!(first, snapshot(dir.path()));
    }

    #[test]
    fn train_writes_every_artifact_and_eval_rescores_it() {
        let dir = tempfile::tempdir().unwrap();
        let rc = resolve_json(&tiny_train_json(""), dir.path());
        cmd_gen_data(&rc).unwrap();
        cmd_train(&rc).unwrap();

        for name in [
            "epochs.csv",
            "checkpoint_best.json",
            "checkpoint_final.json",
            "geometry.csv",
            "summary.json",
            "timing.json",
        ] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let epochs = fs::read_to_string(dir.path().join("epochs.csv")).unwrap();
        assert_eq!(epochs.lines().count(), 1 + rc.train.epochs);
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary["mode"], "joint");
        assert!(summary["test"]["mae"].as_f64().unwrap().is_finite());
        assert!(summary["geometry"]["n_pairs"].as_u64().unwrap() > 0);
        assert!(summary["paired_vanilla"].is_null());
        assert!(summary.get("wall_ms").is_none());

        cmd_eval(&rc).unwrap();
        let eval: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("eval.json")).unwrap())
                .unwrap();
        // eval re-scores the checkpoint the summary was built from
        assert_eq!(
            eval["metrics"]["mae"].as_f64().unwrap(),
            summary["test"]["mae"].as_f64().unwrap()
        );
        assert!(eval["metrics"]["shot"].is_object());
    }

    #[test]
    fn train_without_data_is_a_missing_input() {
        let dir = tempfile::tempdir().unwrap();
        let rc = resolve_json(&tiny_train_json(""), dir.path());
        let err = cmd_train(&rc).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_INPUT);
        assert!(err.to_string().contains("train.csv"));
    }

    #[test]
    fn paired_vanilla_reports_deltas() {
        let dir = tempfile::tempdir().unwrap();
        let rc = resolve_json(&tiny_train_json(r#", "paired_vanilla": true"#), dir.path());
        cmd_gen_data(&rc).unwrap();
        cmd_train(&rc).unwrap();
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        let pv = &summary["paired_vanilla"];
        assert!(pv.is_object());
        assert!(pv["delta_test_mae"].as_f64().unwrap().is_finite());
        assert!(pv["test"]["mae"].as_f64().unwrap().is_finite());
        assert!(dir.path().join("epochs_vanilla.csv").exists());
    }

    #[test]
    fn free_mode_runs_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let json = tiny_train_json(
            r#", "free": {"labels": [0.0, 50.0, 100.0], "dim": 2}"#,
        );
        let mut file = ConfigFile::from_json(&json).unwrap();
        file.train.as_mut().unwrap().mode = Some(TrainMode::FreeEmbedding);
        file.train.as_mut().unwrap().epochs = Some(30);
        let over = Overrides {
            seed: None,
            out_dir: Some(dir.path().display().to_string()),
        };
        let rc = resolve(&file, Scale::Desk, &over).unwrap();
        cmd_train(&rc).unwrap();

        let trace = fs::read_to_string(dir.path().join("free_trace.csv")).unwrap();
        assert_eq!(trace.lines().count(), 1 + 30);
        assert_eq!(trace.lines().next().unwrap(), "step,loss,alignment");
        let emb = fs::read_to_string(dir.path().join("embeddings.csv")).unwrap();
        assert_eq!(emb.lines().count(), 1 + 6); // two views of three labels
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary["mode"], "free_embedding");
        assert_eq!(summary["steps"], 30);
        assert!(summary["geometry"]["pearson"].as_f64().is_some());
    }

    #[test]
    fn gradcheck_accepts_the_analytic_gradients() {
        let dir = tempfile::tempdir().unwrap();
        let rc = resolve_json(&tiny_train_json(""), dir.path());
        assert!(cmd_gradcheck(&rc).unwrap(), "finite differences disagreed");
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("gradcheck.json")).unwrap())
                .unwrap();
        assert_eq!(report["configs"], 24);
        assert!(report["all_passed"].as_bool().unwrap());
        assert!(report["max_rel_err"].as_f64().unwrap() <= 1e-4);
    }

    #[test]
    fn boundcheck_holds_the_intermediate_inequality_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let rc = resolve_json(&tiny_train_json(""), dir.path());
        assert!(cmd_boundcheck(&rc).unwrap(), "intermediate inequality violated");
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("boundcheck.json")).unwrap())
                .unwrap();
        assert_eq!(report["batches"], 1000);
        assert!(report["intermediate_ok_all"].as_bool().unwrap());
        for key in ["stated_pass_fraction", "derived_pass_fraction"] {
            let f = report[key].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&f), "{key} = {f}");
        }
        assert!(report["batches_with_margins"].as_u64().unwrap() > 0);
    }

    #[test]
    fn sweep_writes_one_row_per_cell_and_archives_each_config() {
        let dir = tempfile::tempdir().unwrap();
        let json = tiny_train_json(
            r#", "sweep": {"gammas": [0.0, 1.0], "proj_dims": [4, 8]}"#,
        );
        let rc = resolve_json(&json, dir.path());
        assert!(cmd_sweep(&rc).unwrap());

        let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4, "header plus one row per cell");
        assert!(csv.lines().skip(1).all(|l| l.contains(",ok,")));
        for cell in ["g0_d4", "g1_d4", "g0_d8", "g1_d8"] {
            let cell_dir = dir.path().join("cells").join(cell);
            assert!(cell_dir.join("config.json").exists(), "{cell} config missing");
            assert!(cell_dir.join("summary.json").exists(), "{cell} summary missing");
        }
        let archived = ConfigFile::load(&dir.path().join("cells/g0_d8/config.json")).unwrap();
        assert_eq!(archived.loss.unwrap().gamma, Some(0.0));
        assert_eq!(archived.model.unwrap().proj_dim, Some(8));
    }

    #[test]
    fn a_one_by_one_sweep_matches_a_standalone_training_run() {
        let sweep_dir = tempfile::tempdir().unwrap();
        let json = tiny_train_json(r#", "sweep": {"gammas": [1.0], "proj_dims": [4]}"#);
        let rc_sweep = resolve_json(&json, sweep_dir.path());
        assert!(cmd_sweep(&rc_sweep).unwrap());

        let train_dir = tempfile::tempdir().unwrap();
        let rc_train = resolve_json(&tiny_train_json(""), train_dir.path());
        cmd_gen_data(&rc_train).unwrap();
        cmd_train(&rc_train).unwrap();

        let cell_summary =
            fs::read_to_string(sweep_dir.path().join("cells/g1_d4/summary.json")).unwrap();
        let standalone_summary =
            fs::read_to_string(train_dir.path().join("summary.json")).unwrap();
        assert_eq!(cell_summary, standalone_summary);
    }
}
