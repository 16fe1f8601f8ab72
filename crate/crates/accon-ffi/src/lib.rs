//! C ABI for the angle-compensated contrastive regression library.
//!
//! Conventions shared by every entry point:
//!
//! * Functions return an [`AcconStatus`]; results travel through out
//!   pointers. [`accon_run`] is the one exception — it mirrors the CLI and
//!   returns its process-style exit code.
//! * Heap-backed objects are opaque handles created through `*_new`/`*_load`
//!   out parameters and released with their matching `*_free`. Passing a
//!   handle to any function after freeing it is undefined behavior.
//! * On failure, [`accon_last_error_message`] returns a thread-local,
//!   NUL-terminated description of the most recent error in the calling
//!   thread. The pointer stays valid until that thread calls another
//!   function from this library.
//! * Matrices are row-major `f64` buffers: sample `i` of a `rows x dim`
//!   matrix occupies `[i * dim, (i + 1) * dim)`.
//! * Panics never unwind across the boundary; they surface as
//!   [`AcconStatus`]`::InternalPanic`.

use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::slice;

use accon::config::{Overrides, Scale};
use accon::geometry::{
    compensated_cosine, compensation_angle, ideal_angle, GeometryError, LabelRange, SmoothingEps,
};
use accon::losses::{reference, LossConfig, LossError, RegressionKind};
use accon::metrics::{compute_metrics, geometry_report, MetricsError};
use accon::model::{forward, load_checkpoint, HeadMode, ModelConfig, ModelError, ModelParams};
use accon::pairing::{build_pair_sets, BinConfig, BinMode};
use accon::runner::{self, Command};
use accon::tensor::Tensor;

// ── status codes and the last-error channel ────────────────────────────────

/// Result of an FFI call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcconStatus {
    /// The call succeeded and every out parameter was written.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// An argument violated the documented contract (range, shape, value).
    InvalidArgument = 2,
    /// Inputs were structurally valid but numerically unusable.
    Numeric = 3,
    /// A path or message was not valid UTF-8.
    Utf8 = 4,
    /// The underlying file could not be read or written.
    Io = 5,
    /// A bug: a Rust panic was caught at the boundary.
    InternalPanic = 6,
}

thread_local! {
    static LAST_ERROR: std::cell::RefCell<CString> =
        std::cell::RefCell::new(CString::default());
}

fn set_error(message: impl AsRef<str>) {
    let sanitized: Vec<u8> = message
        .as_ref()
        .bytes()
        .map(|b| if b == 0 { b' ' } else { b })
        .collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("NUL bytes replaced");
    });
}

fn fail(status: AcconStatus, message: impl AsRef<str>) -> AcconStatus {
    set_error(message);
    status
}

/// Description of the most recent failure in the calling thread.
///
/// The string is empty until a call fails. The returned pointer stays valid
/// until this thread calls any other function from this library.
///
/// # Safety
///
/// The returned pointer must not be written through or freed, and must not
/// be read after this thread's next call into the library.
#[no_mangle]
pub unsafe extern "C" fn accon_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

fn guarded(body: impl FnOnce() -> AcconStatus) -> AcconStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            fail(AcconStatus::InternalPanic, format!("internal panic: {msg}"))
        }
    }
}

// ── error classification ───────────────────────────────────────────────────

fn geometry_fail(e: GeometryError) -> AcconStatus {
    fail(AcconStatus::InvalidArgument, e.to_string())
}

fn loss_fail(e: LossError) -> AcconStatus {
    fail(AcconStatus::InvalidArgument, e.to_string())
}

fn metrics_fail(e: MetricsError) -> AcconStatus {
    let status = match e {
        MetricsError::NonFiniteInput { .. } => AcconStatus::Numeric,
        _ => AcconStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

fn model_fail(e: ModelError) -> AcconStatus {
    let status = match &e {
        ModelError::Io(_) => AcconStatus::Io,
        ModelError::NonFiniteInput | ModelError::NonFiniteParam { .. } => AcconStatus::Numeric,
        _ => AcconStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

// ── pointer plumbing ───────────────────────────────────────────────────────

/// # Safety: `ptr` must be valid for `len` reads or `len` must be 0.
unsafe fn in_slice<'a>(ptr: *const f64, len: usize) -> Result<&'a [f64], AcconStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(AcconStatus::NullPointer, "input buffer is NULL"));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

/// # Safety: `ptr` must be valid for `len` writes or `len` must be 0.
unsafe fn out_slice<'a>(ptr: *mut f64, len: usize) -> Result<&'a mut [f64], AcconStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(fail(AcconStatus::NullPointer, "output buffer is NULL"));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

fn write_out<T>(out: *mut T, value: T) -> AcconStatus {
    if out.is_null() {
        return fail(AcconStatus::NullPointer, "output pointer is NULL");
    }
    unsafe { out.write(value) };
    AcconStatus::Ok
}

/// # Safety: `path` must be a valid NUL-terminated string.
unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, AcconStatus> {
    if path.is_null() {
        return Err(fail(AcconStatus::NullPointer, "path is NULL"));
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(AcconStatus::Utf8, "path is not valid UTF-8")),
    }
}

fn matrix_len(rows: usize, dim: usize) -> Result<usize, AcconStatus> {
    rows.checked_mul(dim)
        .ok_or_else(|| fail(AcconStatus::InvalidArgument, "rows * dim overflows"))
}

fn label_range(y_min: f64, y_max: f64) -> Result<LabelRange, AcconStatus> {
    LabelRange::new(y_min, y_max).map_err(geometry_fail)
}

// ── angle geometry ─────────────────────────────────────────────────────────

/// Target angle for an anchor/negative pair: `(y_neg - y_anc) / span * pi`,
/// in `[-pi, pi]`. Labels must lie inside `[y_min, y_max]` and the range
/// must be non-degenerate.
///
/// # Safety
///
/// `out` must be valid for one `double` write.
#[no_mangle]
pub unsafe extern "C" fn accon_ideal_angle(
    y_anc: f64,
    y_neg: f64,
    y_min: f64,
    y_max: f64,
    out: *mut f64,
) -> AcconStatus {
    guarded(|| {
        let range = match label_range(y_min, y_max) {
            Ok(r) => r,
            Err(s) => return s,
        };
        match ideal_angle(y_anc, y_neg, &range) {
            Ok(v) => write_out(out, v),
            Err(e) => geometry_fail(e),
        }
    })
}

/// Compensation angle `pi * (1 - (y_neg - y_anc)/span)`, in `[0, 2*pi]`;
/// always complements [`accon_ideal_angle`] to pi for the same pair.
///
/// # Safety
///
/// `out` must be valid for one `double` write.
#[no_mangle]
pub unsafe extern "C" fn accon_compensation_angle(
    y_anc: f64,
    y_neg: f64,
    y_min: f64,
    y_max: f64,
    out: *mut f64,
) -> AcconStatus {
    guarded(|| {
        let range = match label_range(y_min, y_max) {
            Ok(r) => r,
            Err(s) => return s,
        };
        match compensation_angle(y_anc, y_neg, &range) {
            Ok(v) => write_out(out, v),
            Err(e) => geometry_fail(e),
        }
    })
}

/// Rotate a measured cosine by the compensation angle:
/// `c*cos(phi) - |sin(phi)| * sqrt(1 - c^2 + eps)`. `cosine` must lie in
/// `[-1, 1]` (up to a small tolerance) and `eps` must be finite and >= 0.
///
/// # Safety
///
/// `out` must be valid for one `double` write.
#[no_mangle]
pub unsafe extern "C" fn accon_compensated_cosine(
    cosine: f64,
    phi: f64,
    eps: f64,
    out: *mut f64,
) -> AcconStatus {
    guarded(|| {
        let eps = match SmoothingEps::new(eps) {
            Ok(e) => e,
            Err(e) => return geometry_fail(e),
        };
        match compensated_cosine(cosine, phi, eps) {
            Ok(v) => write_out(out, v),
            Err(e) => geometry_fail(e),
        }
    })
}

// ── batch losses ───────────────────────────────────────────────────────────

/// Opaque bundle of contrastive-loss settings: temperature, smoothing,
/// label range, and the label-bin width that defines positive pairs.
pub struct AcconLossConfig {
    inner: LossConfig,
    range: LabelRange,
}

/// Create a loss configuration.
///
/// `tau` is the softmax temperature (> 0), `eps` the smoothing term inside
/// the compensated cosine (>= 0), `[y_min, y_max]` the label range, and
/// `bin_width` (> 0, in label units) the size of the label bins whose
/// co-membership defines positive pairs. When `plain_negatives` is true the
/// denominator keeps raw cosines on negatives instead of compensated ones
/// (the plain supervised-contrastive behavior).
///
/// # Safety
///
/// `out` must be valid for one pointer write. The returned handle must be
/// released with [`accon_loss_config_free`].
#[no_mangle]
pub unsafe extern "C" fn accon_loss_config_new(
    tau: f64,
    eps: f64,
    y_min: f64,
    y_max: f64,
    bin_width: f64,
    plain_negatives: bool,
    out: *mut *mut AcconLossConfig,
) -> AcconStatus {
    guarded(|| {
        let range = match label_range(y_min, y_max) {
            Ok(r) => r,
            Err(s) => return s,
        };
        let eps = match SmoothingEps::new(eps) {
            Ok(e) => e,
            Err(e) => return geometry_fail(e),
        };
        let bin = match BinConfig::new(range, BinMode::Width(bin_width)) {
            Ok(b) => b,
            Err(e) => return fail(AcconStatus::InvalidArgument, e.to_string()),
        };
        let inner = match LossConfig::new(tau, 1.0, eps, RegressionKind::Mae, bin) {
            Ok(c) => c,
            Err(e) => return loss_fail(e),
        };
        let inner = if plain_negatives {
            inner.with_denominator(accon::losses::DenominatorMode::PlainNegatives)
        } else {
            inner
        };
        let handle = Box::into_raw(Box::new(AcconLossConfig { inner, range }));
        write_out(out, handle)
    })
}

/// Release a loss configuration. NULL is ignored.
///
/// # Safety
///
/// `cfg` must be NULL or a handle from [`accon_loss_config_new`] that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn accon_loss_config_free(cfg: *mut AcconLossConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

unsafe fn batch_args<'a>(
    z: *const f64,
    rows: usize,
    dim: usize,
    labels: *const f64,
) -> Result<(Tensor, &'a [f64]), AcconStatus> {
    let len = matrix_len(rows, dim)?;
    let z = in_slice(z, len)?;
    let labels = in_slice(labels, rows)?;
    let tensor = Tensor::new([rows, dim], z.to_vec())
        .map_err(|e| fail(AcconStatus::InvalidArgument, e.to_string()))?;
    Ok((tensor, labels))
}

/// Angle-compensated contrastive loss of one batch: mean over anchors of
/// the per-anchor losses, where positives share the anchor's label bin and
/// negatives enter the denominator through their compensated cosine. Rows
/// of `z` must be unit vectors; `labels[i]` belongs to row `i`.
///
/// # Safety
///
/// `z` must be valid for `rows * dim` reads, `labels` for `rows` reads, and
/// `out` for one `double` write. `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn accon_contrastive_loss(
    cfg: *const AcconLossConfig,
    z: *const f64,
    rows: usize,
    dim: usize,
    labels: *const f64,
    out: *mut f64,
) -> AcconStatus {
    guarded(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(AcconStatus::NullPointer, "loss config is NULL");
        };
        let (tensor, labels) = match batch_args(z, rows, dim, labels) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let pairs = match build_pair_sets(labels, &cfg.inner.bin) {
            Ok(p) => p,
            Err(e) => return fail(AcconStatus::InvalidArgument, e.to_string()),
        };
        match reference::accon_batch(&tensor, labels, &pairs, &cfg.inner, &cfg.range) {
            Ok(v) => write_out(out, v),
            Err(e) => loss_fail(e),
        }
    })
}

/// Plain supervised-contrastive loss of one batch (raw cosines everywhere),
/// under the same binning and temperature as `cfg`.
///
/// # Safety
///
/// Same contracts as [`accon_contrastive_loss`].
#[no_mangle]
pub unsafe extern "C" fn accon_plain_supcon_loss(
    cfg: *const AcconLossConfig,
    z: *const f64,
    rows: usize,
    dim: usize,
    labels: *const f64,
    out: *mut f64,
) -> AcconStatus {
    guarded(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(AcconStatus::NullPointer, "loss config is NULL");
        };
        let (tensor, labels) = match batch_args(z, rows, dim, labels) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let pairs = match build_pair_sets(labels, &cfg.inner.bin) {
            Ok(p) => p,
            Err(e) => return fail(AcconStatus::InvalidArgument, e.to_string()),
        };
        match reference::naive_supcon(&tensor, &pairs, cfg.inner.tau) {
            Ok(v) => write_out(out, v),
            Err(e) => loss_fail(e),
        }
    })
}

/// Scale every row of a `rows x dim` matrix to unit Euclidean norm, in
/// place. Zero rows are left unchanged.
///
/// # Safety
///
/// `z` must be valid for `rows * dim` reads and writes.
#[no_mangle]
pub unsafe extern "C" fn accon_normalize_rows(
    z: *mut f64,
    rows: usize,
    dim: usize,
) -> AcconStatus {
    guarded(|| {
        let len = match matrix_len(rows, dim) {
            Ok(l) => l,
            Err(s) => return s,
        };
        let values = match out_slice(z, len) {
            Ok(v) => v,
            Err(s) => return s,
        };
        for row in values.chunks_exact_mut(dim.max(1)) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        AcconStatus::Ok
    })
}

// ── metrics ────────────────────────────────────────────────────────────────

/// Regression quality summary. `gm` is the stabilized geometric mean of
/// absolute errors, `r2` the coefficient of determination, `pearson` the
/// prediction/target correlation.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AcconMetrics {
    pub mae: f64,
    pub mse: f64,
    pub gm: f64,
    pub r2: f64,
    pub pearson: f64,
}

/// Compute MAE, MSE, geometric-mean error, R², and Pearson correlation of
/// `n >= 2` prediction/target pairs. `eps_gm >= 0` stabilizes the geometric
/// mean (`gm = exp(mean ln(|error| + eps_gm))`).
///
/// # Safety
///
/// `predictions` and `targets` must be valid for `n` reads and `out` for
/// one [`AcconMetrics`] write.
#[no_mangle]
pub unsafe extern "C" fn accon_metrics(
    predictions: *const f64,
    targets: *const f64,
    n: usize,
    eps_gm: f64,
    out: *mut AcconMetrics,
) -> AcconStatus {
    guarded(|| {
        let (p, t) = match (in_slice(predictions, n), in_slice(targets, n)) {
            (Ok(p), Ok(t)) => (p, t),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match compute_metrics(p, t, eps_gm) {
            Ok(m) => write_out(
                out,
                AcconMetrics {
                    mae: m.mae,
                    mse: m.mse,
                    gm: m.gm,
                    r2: m.r2,
                    pearson: m.pearson,
                },
            ),
            Err(e) => metrics_fail(e),
        }
    })
}

/// Pearson correlation between pairwise embedding cosines and normalized
/// label distances over all row pairs of `z` (unit rows, one label per
/// row). The hallmark of a well-ordered embedding is a strongly negative
/// value. Fails when either side has zero variance.
///
/// # Safety
///
/// `z` must be valid for `rows * dim` reads, `labels` for `rows` reads, and
/// `out` for one `double` write.
#[no_mangle]
pub unsafe extern "C" fn accon_geometry_pearson(
    z: *const f64,
    rows: usize,
    dim: usize,
    labels: *const f64,
    y_min: f64,
    y_max: f64,
    out: *mut f64,
) -> AcconStatus {
    guarded(|| {
        let range = match label_range(y_min, y_max) {
            Ok(r) => r,
            Err(s) => return s,
        };
        let (tensor, labels) = match batch_args(z, rows, dim, labels) {
            Ok(v) => v,
            Err(s) => return s,
        };
        match geometry_report(&tensor, labels, &range, 10, 0) {
            Ok(report) => match report.pearson {
                Some(p) => write_out(out, p),
                None => fail(
                    AcconStatus::Numeric,
                    "pairwise cosines or label distances have zero variance",
                ),
            },
            Err(e) => metrics_fail(e),
        }
    })
}

// ── trained models ─────────────────────────────────────────────────────────

/// Opaque trained model: encoder, optional projection, predictor, and the
/// architecture needed to run them.
pub struct AcconModel {
    cfg: ModelConfig,
    params: ModelParams,
}

fn embedding_width(cfg: &ModelConfig) -> usize {
    let encoder_out = cfg.encoder_layers.last().copied().unwrap_or(cfg.input_dim);
    match cfg.head_mode {
        HeadMode::Standard => cfg.proj_dim,
        HeadMode::BeforeProj | HeadMode::NoProj => encoder_out,
    }
}

/// Load a model from a training checkpoint (`checkpoint_best.json` or
/// `checkpoint_final.json` as written by the `accon` CLI).
///
/// # Safety
///
/// `path` must be a valid NUL-terminated string and `out` valid for one
/// pointer write. The returned handle must be released with
/// [`accon_model_free`].
#[no_mangle]
pub unsafe extern "C" fn accon_model_load(
    path: *const c_char,
    out: *mut *mut AcconModel,
) -> AcconStatus {
    guarded(|| {
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_checkpoint(&path) {
            Ok((cfg, params)) => {
                let handle = Box::into_raw(Box::new(AcconModel { cfg, params }));
                write_out(out, handle)
            }
            Err(e) => model_fail(e),
        }
    })
}

/// Release a model handle. NULL is ignored.
///
/// # Safety
///
/// `model` must be NULL or a handle from [`accon_model_load`] that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn accon_model_free(model: *mut AcconModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of input features the model expects per sample.
///
/// # Safety
///
/// `model` must be a live handle and `out` valid for one `size_t` write.
#[no_mangle]
pub unsafe extern "C" fn accon_model_input_dim(
    model: *const AcconModel,
    out: *mut usize,
) -> AcconStatus {
    guarded(|| match model.as_ref() {
        Some(m) => write_out(out, m.cfg.input_dim),
        None => fail(AcconStatus::NullPointer, "model is NULL"),
    })
}

/// Width of the unit-normalized embeddings produced by
/// [`accon_model_embed`].
///
/// # Safety
///
/// `model` must be a live handle and `out` valid for one `size_t` write.
#[no_mangle]
pub unsafe extern "C" fn accon_model_embedding_dim(
    model: *const AcconModel,
    out: *mut usize,
) -> AcconStatus {
    guarded(|| match model.as_ref() {
        Some(m) => write_out(out, embedding_width(&m.cfg)),
        None => fail(AcconStatus::NullPointer, "model is NULL"),
    })
}

unsafe fn run_forward(
    model: *const AcconModel,
    x: *const f64,
    rows: usize,
    d_in: usize,
) -> Result<(accon::model::ForwardOutputs, usize), AcconStatus> {
    let model = model
        .as_ref()
        .ok_or_else(|| fail(AcconStatus::NullPointer, "model is NULL"))?;
    if rows == 0 {
        return Err(fail(AcconStatus::InvalidArgument, "rows must be >= 1"));
    }
    let len = matrix_len(rows, d_in)?;
    let x = in_slice(x, len)?;
    let tensor = Tensor::new([rows, d_in], x.to_vec())
        .map_err(|e| fail(AcconStatus::InvalidArgument, e.to_string()))?;
    let out = forward(&model.params, &tensor, &model.cfg).map_err(model_fail)?;
    Ok((out, embedding_width(&model.cfg)))
}

/// Predict one target value per row of `x` (`rows x d_in`, row-major) into
/// `out_y` (`rows` doubles).
///
/// # Safety
///
/// `model` must be a live handle, `x` valid for `rows * d_in` reads, and
/// `out_y` valid for `rows` writes.
#[no_mangle]
pub unsafe extern "C" fn accon_model_predict(
    model: *const AcconModel,
    x: *const f64,
    rows: usize,
    d_in: usize,
    out_y: *mut f64,
) -> AcconStatus {
    guarded(|| {
        let (fwd, _) = match run_forward(model, x, rows, d_in) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let out = match out_slice(out_y, rows) {
            Ok(o) => o,
            Err(s) => return s,
        };
        out.copy_from_slice(fwd.y_hat.values());
        AcconStatus::Ok
    })
}

/// Produce the unit-normalized contrastive embedding of each row of `x`
/// into `out_z` (`rows * embedding_dim` doubles, row-major; query the width
/// with [`accon_model_embedding_dim`]).
///
/// # Safety
///
/// `model` must be a live handle, `x` valid for `rows * d_in` reads, and
/// `out_z` valid for `rows * embedding_dim` writes.
#[no_mangle]
pub unsafe extern "C" fn accon_model_embed(
    model: *const AcconModel,
    x: *const f64,
    rows: usize,
    d_in: usize,
    out_z: *mut f64,
) -> AcconStatus {
    guarded(|| {
        let (fwd, width) = match run_forward(model, x, rows, d_in) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let len = match matrix_len(rows, width) {
            Ok(l) => l,
            Err(s) => return s,
        };
        let out = match out_slice(out_z, len) {
            Ok(o) => o,
            Err(s) => return s,
        };
        out.copy_from_slice(fwd.z_tilde.values());
        AcconStatus::Ok
    })
}

// ── harness entry point ────────────────────────────────────────────────────

/// Subcommands of the run harness, mirroring the CLI.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcconCommand {
    /// Generate a dataset and write train/val/test CSVs plus a manifest.
    GenData = 0,
    /// Train per the configured mode and write checkpoints and reports.
    Train = 1,
    /// Re-score the best checkpoint on the test split.
    Eval = 2,
    /// Check analytic gradients against finite differences.
    Gradcheck = 3,
    /// Survey the per-anchor lower-bound inequality on random batches.
    Boundcheck = 4,
    /// Train one model per gamma/projection-width grid cell.
    Sweep = 5,
}

/// Preset scale for ranges, model width, and epochs.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcconScale {
    /// Laptop-sized defaults; every check runs in minutes.
    Desk = 0,
    /// Full-study defaults (large model and dataset).
    Paper = 1,
}

/// Run one harness command against a JSON config file, exactly like the
/// `accon` CLI: storage-level outputs land under the configured (or
/// overridden) output directory, progress goes to stdout, and errors go to
/// stderr.
///
/// `out_dir` may be NULL to keep the config's output directory. `seed` may
/// be NULL to keep the config's seed; otherwise it points at the override.
///
/// Returns the CLI exit code: 0 success, 1 a check failed, 2 invalid
/// input, 3 numeric failure. UTF-8 problems in `config_path` or `out_dir`
/// return 2.
///
/// # Safety
///
/// `config_path` must be a valid NUL-terminated string; `out_dir`, when not
/// NULL, must be too; `seed`, when not NULL, must be valid for one read.
#[no_mangle]
pub unsafe extern "C" fn accon_run(
    command: AcconCommand,
    config_path: *const c_char,
    out_dir: *const c_char,
    seed: *const u64,
    scale: AcconScale,
) -> c_int {
    let run = || -> c_int {
        let Ok(config_path) = path_arg(config_path) else {
            eprintln!("error: config path is NULL or not valid UTF-8");
            return i32::from(runner::EXIT_INPUT);
        };
        let out_dir = if out_dir.is_null() {
            None
        } else {
            match CStr::from_ptr(out_dir).to_str() {
                Ok(s) => Some(s.to_string()),
                Err(_) => {
                    eprintln!("error: output directory is not valid UTF-8");
                    return i32::from(runner::EXIT_INPUT);
                }
            }
        };
        let over = Overrides {
            seed: seed.as_ref().copied(),
            out_dir,
        };
        let cmd = match command {
            AcconCommand::GenData => Command::GenData,
            AcconCommand::Train => Command::Train,
            AcconCommand::Eval => Command::Eval,
            AcconCommand::Gradcheck => Command::Gradcheck,
            AcconCommand::Boundcheck => Command::Boundcheck,
            AcconCommand::Sweep => Command::Sweep,
        };
        let scale = match scale {
            AcconScale::Desk => Scale::Desk,
            AcconScale::Paper => Scale::Paper,
        };
        i32::from(runner::run(cmd, Path::new(&config_path), scale, &over))
    };
    match catch_unwind(AssertUnwindSafe(run)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic in accon_run");
            i32::from(runner::EXIT_NUMERIC)
        }
    }
}
