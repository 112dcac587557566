#ifndef MLC_NOISE_H
#define MLC_NOISE_H

/* Generated by cbindgen at build time. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MlcnStatus {
  MLCN_STATUS_OK = 0,
  MLCN_STATUS_NULL_POINTER = 1,
  MLCN_STATUS_INVALID_ARGUMENT = 2,
  MLCN_STATUS_IO = 3,
  MLCN_STATUS_PARSE = 4,
  MLCN_STATUS_SHAPE = 5,
  MLCN_STATUS_CONFIG = 6,
  MLCN_STATUS_MISSING_LEDGER = 7,
  MLCN_STATUS_CALIBRATION = 8,
  MLCN_STATUS_INSUFFICIENT_NEGATIVES = 9,
  MLCN_STATUS_NON_FINITE = 10,
  /**
   * Average precision of a ranking without positives.
   */
  MLCN_STATUS_NO_POSITIVES = 11,
  MLCN_STATUS_BUFFER_TOO_SMALL = 12,
  MLCN_STATUS_PANIC = 13,
} MlcnStatus;

typedef enum MlcnNoise {
  /**
   * `param` is the requested noise level.
   */
  MLCN_NOISE_UNIFORM = 0,
  /**
   * `param` is the per-class rate of positives flipped down.
   */
  MLCN_NOISE_MIXED = 1,
} MlcnNoise;

typedef struct MlcnDataset MlcnDataset;

typedef struct MlcnLedger MlcnLedger;

typedef struct MlcnReport MlcnReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *mlcn_last_error(void);

/**
 * Generates a synthetic dataset.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum MlcnStatus mlcn_synth_generate(size_t n,
                                    size_t d,
                                    size_t classes,
                                    double prevalence,
                                    double correlation,
                                    uint64_t seed,
                                    struct MlcnDataset **out);

/**
 * Builds a dataset from row-major buffers: `features` is `rows x d`,
 * `labels` is `rows x classes`.
 *
 * # Safety
 * The buffers must hold `rows * d` and `rows * classes` elements; `out`
 * must be valid for a pointer write.
 */
enum MlcnStatus mlcn_dataset_new(const double *features,
                                 const uint8_t *labels,
                                 size_t rows,
                                 size_t d,
                                 size_t classes,
                                 struct MlcnDataset **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for a pointer write.
 */
enum MlcnStatus mlcn_dataset_load_csv(const char *path, struct MlcnDataset **out);

/**
 * # Safety
 * `ds` must be a live dataset handle; `path` a NUL-terminated string.
 */
enum MlcnStatus mlcn_dataset_save_csv(const struct MlcnDataset *ds, const char *path);

/**
 * Writes rows, features and classes; any output pointer may be null.
 *
 * # Safety
 * `ds` must be a live dataset handle; non-null outputs valid for writes.
 */
enum MlcnStatus mlcn_dataset_shape(const struct MlcnDataset *ds,
                                   size_t *rows,
                                   size_t *d,
                                   size_t *classes);

/**
 * Copies the `rows x classes` label matrix into `out`.
 *
 * # Safety
 * `ds` must be a live dataset handle; `out` must hold `capacity` bytes.
 */
enum MlcnStatus mlcn_dataset_labels(const struct MlcnDataset *ds, uint8_t *out, size_t capacity);

/**
 * Copies the `rows x d` feature matrix into `out`.
 *
 * # Safety
 * `ds` must be a live dataset handle; `out` must hold `capacity` doubles.
 */
enum MlcnStatus mlcn_dataset_features(const struct MlcnDataset *ds, double *out, size_t capacity);

/**
 * # Safety
 * `ds` must be null or a handle not freed before.
 */
void mlcn_dataset_free(struct MlcnDataset *ds);

/**
 * Corrupts the labels of `ds` into a new dataset plus its ledger.
 *
 * # Safety
 * `ds` must be a live dataset handle; outputs valid for pointer writes.
 */
enum MlcnStatus mlcn_inject(const struct MlcnDataset *ds,
                            enum MlcnNoise strategy,
                            double param,
                            uint64_t seed,
                            struct MlcnDataset **out_noisy,
                            struct MlcnLedger **out_ledger);

/**
 * Class-swap noise from a row-stochastic `classes x classes` matrix.
 *
 * # Safety
 * `ds` must be a live dataset handle, `matrix` must hold `classes^2`
 * doubles; outputs valid for pointer writes.
 */
enum MlcnStatus mlcn_inject_transition(const struct MlcnDataset *ds,
                                       const double *matrix,
                                       size_t classes,
                                       uint64_t seed,
                                       struct MlcnDataset **out_noisy,
                                       struct MlcnLedger **out_ledger);

/**
 * Mixed-noise rate that reaches `epsilon` at the given overall prevalence.
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum MlcnStatus mlcn_mixed_rate_for_target(double epsilon, double prevalence, double *out);

/**
 * Realized noise level: flipped cells over all cells.
 *
 * # Safety
 * `ledger` must be a live handle; `out` valid for a write.
 */
enum MlcnStatus mlcn_ledger_epsilon(const struct MlcnLedger *ledger, double *out);

/**
 * Per-class noise levels, one double per class.
 *
 * # Safety
 * `ledger` must be a live handle; `out` must hold `capacity` doubles.
 */
enum MlcnStatus mlcn_ledger_epsilon_per_class(const struct MlcnLedger *ledger,
                                              double *out,
                                              size_t capacity);

/**
 * Row-major flip mask, 1 where the label was inverted.
 *
 * # Safety
 * `ledger` must be a live handle; `out` must hold `capacity` bytes.
 */
enum MlcnStatus mlcn_ledger_flip_mask(const struct MlcnLedger *ledger,
                                      uint8_t *out,
                                      size_t capacity);

/**
 * # Safety
 * `ledger` must be a live handle; `path` a NUL-terminated string.
 */
enum MlcnStatus mlcn_ledger_save(const struct MlcnLedger *ledger, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for a pointer write.
 */
enum MlcnStatus mlcn_ledger_load(const char *path, struct MlcnLedger **out);

/**
 * # Safety
 * `ledger` must be null or a handle not freed before.
 */
void mlcn_ledger_free(struct MlcnLedger *ledger);

/**
 * `clip(alpha * epsilon, 0, 1)`.
 */
double mlcn_forget_rate(double alpha, double epsilon);

/**
 * Binary entropy, scaled to `[0, 1]`, of a window with `ones` positive
 * predictions out of `window`.
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum MlcnStatus mlcn_scaled_entropy(size_t ones, size_t window, double *out);

/**
 * Average precision of `scores` against 0/1 `labels`.
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements; `out` valid for a write.
 */
enum MlcnStatus mlcn_average_precision(const double *scores,
                                       const uint8_t *labels,
                                       size_t n,
                                       double *out);

/**
 * Pooled small-loss selection: `keep[k]` is set to 1 for the
 * `ceil((1 - tau) m)` smallest losses, ties by index.
 *
 * # Safety
 * `losses` and `keep` must hold `m` elements.
 */
enum MlcnStatus mlcn_select_small_loss(const double *losses, size_t m, double tau, uint8_t *keep);

/**
 * Per-class selection over a row-major `rows x classes` loss matrix with
 * one forget rate per class.
 *
 * # Safety
 * `losses` and `keep` must hold `rows * classes` elements, `taus` must
 * hold `classes`.
 */
enum MlcnStatus mlcn_select_small_loss_per_class(const double *losses,
                                                 size_t rows,
                                                 size_t classes,
                                                 const double *taus,
                                                 uint8_t *keep);

/**
 * Loads a config file and trains its first seed (or `seed` when
 * `use_seed` is non-zero). Nothing is written to disk.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `out` valid for a
 * pointer write.
 */
enum MlcnStatus mlcn_run_config(const char *config_path,
                                int32_t use_seed,
                                uint64_t seed,
                                struct MlcnReport **out);

/**
 * Final test mAP of the network selected by validation.
 *
 * # Safety
 * `report` must be a live handle; `out` valid for a write.
 */
enum MlcnStatus mlcn_report_test_map(const struct MlcnReport *report, double *out);

/**
 * Number of epochs recorded in the report.
 *
 * # Safety
 * `report` must be a live handle; `out` valid for a write.
 */
enum MlcnStatus mlcn_report_epochs(const struct MlcnReport *report, size_t *out);

/**
 * Writes the report as JSON.
 *
 * # Safety
 * `report` must be a live handle; `path` a NUL-terminated string.
 */
enum MlcnStatus mlcn_report_save_json(const struct MlcnReport *report, const char *path);

/**
 * # Safety
 * `report` must be null or a handle not freed before.
 */
void mlcn_report_free(struct MlcnReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MLC_NOISE_H */
