#ifndef ACCON_H
#define ACCON_H

/* Generated by cbindgen from the accon-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Subcommands of the run harness, mirroring the CLI.
 */
typedef enum AcconCommand {
  /**
   * Generate a dataset and write train/val/test CSVs plus a manifest.
   */
  ACCON_COMMAND_GEN_DATA = 0,
  /**
   * Train per the configured mode and write checkpoints and reports.
   */
  ACCON_COMMAND_TRAIN = 1,
  /**
   * Re-score the best checkpoint on the test split.
   */
  ACCON_COMMAND_EVAL = 2,
  /**
   * Check analytic gradients against finite differences.
   */
  ACCON_COMMAND_GRADCHECK = 3,
  /**
   * Survey the per-anchor lower-bound inequality on random batches.
   */
  ACCON_COMMAND_BOUNDCHECK = 4,
  /**
   * Train one model per gamma/projection-width grid cell.
   */
  ACCON_COMMAND_SWEEP = 5,
} AcconCommand;

/**
 * Preset scale for ranges, model width, and epochs.
 */
typedef enum AcconScale {
  /**
   * Laptop-sized defaults; every check runs in minutes.
   */
  ACCON_SCALE_DESK = 0,
  /**
   * Full-study defaults (large model and dataset).
   */
  ACCON_SCALE_PAPER = 1,
} AcconScale;

/**
 * Result of an FFI call.
 */
typedef enum AcconStatus {
  /**
   * The call succeeded and every out parameter was written.
   */
  ACCON_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  ACCON_STATUS_NULL_POINTER = 1,
  /**
   * An argument violated the documented contract (range, shape, value).
   */
  ACCON_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Inputs were structurally valid but numerically unusable.
   */
  ACCON_STATUS_NUMERIC = 3,
  /**
   * A path or message was not valid UTF-8.
   */
  ACCON_STATUS_UTF8 = 4,
  /**
   * The underlying file could not be read or written.
   */
  ACCON_STATUS_IO = 5,
  /**
   * A bug: a Rust panic was caught at the boundary.
   */
  ACCON_STATUS_INTERNAL_PANIC = 6,
} AcconStatus;

/**
 * Opaque bundle of contrastive-loss settings: temperature, smoothing,
 * label range, and the label-bin width that defines positive pairs.
 */
typedef struct AcconLossConfig AcconLossConfig;

/**
 * Opaque trained model: encoder, optional projection, predictor, and the
 * architecture needed to run them.
 */
typedef struct AcconModel AcconModel;

/**
 * Regression quality summary. `gm` is the stabilized geometric mean of
 * absolute errors, `r2` the coefficient of determination, `pearson` the
 * prediction/target correlation.
 */
typedef struct AcconMetrics {
  double mae;
  double mse;
  double gm;
  double r2;
  double pearson;
} AcconMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Description of the most recent failure in the calling thread.
 *
 * The string is empty until a call fails. The returned pointer stays valid
 * until this thread calls any other function from this library.
 *
 * # Safety
 *
 * The returned pointer must not be written through or freed, and must not
 * be read after this thread's next call into the library.
 */
const char *accon_last_error_message(void);

/**
 * Target angle for an anchor/negative pair: `(y_neg - y_anc) / span * pi`,
 * in `[-pi, pi]`. Labels must lie inside `[y_min, y_max]` and the range
 * must be non-degenerate.
 *
 * # Safety
 *
 * `out` must be valid for one `double` write.
 */
enum AcconStatus accon_ideal_angle(double y_anc,
                                   double y_neg,
                                   double y_min,
                                   double y_max,
                                   double *out);

/**
 * Compensation angle `pi * (1 - (y_neg - y_anc)/span)`, in `[0, 2*pi]`;
 * always complements [`accon_ideal_angle`] to pi for the same pair.
 *
 * # Safety
 *
 * `out` must be valid for one `double` write.
 */
enum AcconStatus accon_compensation_angle(double y_anc,
                                          double y_neg,
                                          double y_min,
                                          double y_max,
                                          double *out);

/**
 * Rotate a measured cosine by the compensation angle:
 * `c*cos(phi) - |sin(phi)| * sqrt(1 - c^2 + eps)`. `cosine` must lie in
 * `[-1, 1]` (up to a small tolerance) and `eps` must be finite and >= 0.
 *
 * # Safety
 *
 * `out` must be valid for one `double` write.
 */
enum AcconStatus accon_compensated_cosine(double cosine, double phi, double eps, double *out);

/**
 * Create a loss configuration.
 *
 * `tau` is the softmax temperature (> 0), `eps` the smoothing term inside
 * the compensated cosine (>= 0), `[y_min, y_max]` the label range, and
 * `bin_width` (> 0, in label units) the size of the label bins whose
 * co-membership defines positive pairs. When `plain_negatives` is true the
 * denominator keeps raw cosines on negatives instead of compensated ones
 * (the plain supervised-contrastive behavior).
 *
 * # Safety
 *
 * `out` must be valid for one pointer write. The returned handle must be
 * released with [`accon_loss_config_free`].
 */
enum AcconStatus accon_loss_config_new(double tau,
                                       double eps,
                                       double y_min,
                                       double y_max,
                                       double bin_width,
                                       bool plain_negatives,
                                       struct AcconLossConfig **out);

/**
 * Release a loss configuration. NULL is ignored.
 *
 * # Safety
 *
 * `cfg` must be NULL or a handle from [`accon_loss_config_new`] that has
 * not been freed yet.
 */
void accon_loss_config_free(struct AcconLossConfig *cfg);

/**
 * Angle-compensated contrastive loss of one batch: mean over anchors of
 * the per-anchor losses, where positives share the anchor's label bin and
 * negatives enter the denominator through their compensated cosine. Rows
 * of `z` must be unit vectors; `labels[i]` belongs to row `i`.
 *
 * # Safety
 *
 * `z` must be valid for `rows * dim` reads, `labels` for `rows` reads, and
 * `out` for one `double` write. `cfg` must be a live handle.
 */
enum AcconStatus accon_contrastive_loss(const struct AcconLossConfig *cfg,
                                        const double *z,
                                        size_t rows,
                                        size_t dim,
                                        const double *labels,
                                        double *out);

/**
 * Plain supervised-contrastive loss of one batch (raw cosines everywhere),
 * under the same binning and temperature as `cfg`.
 *
 * # Safety
 *
 * Same contracts as [`accon_contrastive_loss`].
 */
enum AcconStatus accon_plain_supcon_loss(const struct AcconLossConfig *cfg,
                                         const double *z,
                                         size_t rows,
                                         size_t dim,
                                         const double *labels,
                                         double *out);

/**
 * Scale every row of a `rows x dim` matrix to unit Euclidean norm, in
 * place. Zero rows are left unchanged.
 *
 * # Safety
 *
 * `z` must be valid for `rows * dim` reads and writes.
 */
enum AcconStatus accon_normalize_rows(double *z, size_t rows, size_t dim);

/**
 * Compute MAE, MSE, geometric-mean error, R², and Pearson correlation of
 * `n >= 2` prediction/target pairs. `eps_gm >= 0` stabilizes the geometric
 * mean (`gm = exp(mean ln(|error| + eps_gm))`).
 *
 * # Safety
 *
 * `predictions` and `targets` must be valid for `n` reads and `out` for
 * one [`AcconMetrics`] write.
 */
enum AcconStatus accon_metrics(const double *predictions,
                               const double *targets,
                               size_t n,
                               double eps_gm,
                               struct AcconMetrics *out);

/**
 * Pearson correlation between pairwise embedding cosines and normalized
 * label distances over all row pairs of `z` (unit rows, one label per
 * row). The hallmark of a well-ordered embedding is a strongly negative
 * value. Fails when either side has zero variance.
 *
 * # Safety
 *
 * `z` must be valid for `rows * dim` reads, `labels` for `rows` reads, and
 * `out` for one `double` write.
 */
enum AcconStatus accon_geometry_pearson(const double *z,
                                        size_t rows,
                                        size_t dim,
                                        const double *labels,
                                        double y_min,
                                        double y_max,
                                        double *out);

/**
 * Load a model from a training checkpoint (`checkpoint_best.json` or
 * `checkpoint_final.json` as written by the `accon` CLI).
 *
 * # Safety
 *
 * `path` must be a valid NUL-terminated string and `out` valid for one
 * pointer write. The returned handle must be released with
 * [`accon_model_free`].
 */
enum AcconStatus accon_model_load(const char *path, struct AcconModel **out);

/**
 * Release a model handle. NULL is ignored.
 *
 * # Safety
 *
 * `model` must be NULL or a handle from [`accon_model_load`] that has not
 * been freed yet.
 */
void accon_model_free(struct AcconModel *model);

/**
 * Number of input features the model expects per sample.
 *
 * # Safety
 *
 * `model` must be a live handle and `out` valid for one `size_t` write.
 */
enum AcconStatus accon_model_input_dim(const struct AcconModel *model, size_t *out);

/**
 * Width of the unit-normalized embeddings produced by
 * [`accon_model_embed`].
 *
 * # Safety
 *
 * `model` must be a live handle and `out` valid for one `size_t` write.
 */
enum AcconStatus accon_model_embedding_dim(const struct AcconModel *model, size_t *out);

/**
 * Predict one target value per row of `x` (`rows x d_in`, row-major) into
 * `out_y` (`rows` doubles).
 *
 * # Safety
 *
 * `model` must be a live handle, `x` valid for `rows * d_in` reads, and
 * `out_y` valid for `rows` writes.
 */
enum AcconStatus accon_model_predict(const struct AcconModel *model,
                                     const double *x,
                                     size_t rows,
                                     size_t d_in,
                                     double *out_y);

/**
 * Produce the unit-normalized contrastive embedding of each row of `x`
 * into `out_z` (`rows * embedding_dim` doubles, row-major; query the width
 * with [`accon_model_embedding_dim`]).
 *
 * # Safety
 *
 * `model` must be a live handle, `x` valid for `rows * d_in` reads, and
 * `out_z` valid for `rows * embedding_dim` writes.
 */
enum AcconStatus accon_model_embed(const struct AcconModel *model,
                                   const double *x,
                                   size_t rows,
                                   size_t d_in,
                                   double *out_z);

/**
 * Run one harness command against a JSON config file, exactly like the
 * `accon` CLI: storage-level outputs land under the configured (or
 * overridden) output directory, progress goes to stdout, and errors go to
 * stderr.
 *
 * `out_dir` may be NULL to keep the config's output directory. `seed` may
 * be NULL to keep the config's seed; otherwise it points at the override.
 *
 * Returns the CLI exit code: 0 success, 1 a check failed, 2 invalid
 * input, 3 numeric failure. UTF-8 problems in `config_path` or `out_dir`
 * return 2.
 *
 * # Safety
 *
 * `config_path` must be a valid NUL-terminated string; `out_dir`, when not
 * NULL, must be too; `seed`, when not NULL, must be valid for one read.
 */
int accon_run(enum AcconCommand command,
              const char *config_path,
              const char *out_dir,
              const uint64_t *seed,
              enum AcconScale scale);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACCON_H */
