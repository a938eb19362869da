/* Generated by cbindgen from crates/ffi. Do not edit. */

#ifndef AWA_H
#define AWA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. `AWA_STATUS_OK` is zero.
typedef enum AwaStatus {
  AWA_STATUS_OK = 0,
  AWA_STATUS_NULL_POINTER = 1,
  AWA_STATUS_INVALID_ARGUMENT = 2,
  AWA_STATUS_IO = 3,
  AWA_STATUS_FORMAT = 4,
  AWA_STATUS_ARCHITECTURE_MISMATCH = 5,
  AWA_STATUS_DIVERGED = 6,
  AWA_STATUS_NUMERICAL = 7,
  // A Rust panic was caught at the boundary.
  AWA_STATUS_INTERNAL = 8,
} AwaStatus;

// Reconstruction produced by an attack or a tuning run.
typedef struct AwaAttackResult AwaAttackResult;

// A recorded FedAvg round together with its known labels and ground truth.
typedef struct AwaRound AwaRound;

// Attack settings. Start from [`awa_attack_config_default`].
typedef struct AwaAttackConfig {
  size_t iterations;
  double lr;
  // True selects the weighted loss.
  bool weighted;
  // 1-based epoch attacked when the round has several epochs and mini-batches.
  size_t target_epoch;
  uint64_t init_seed;
} AwaAttackConfig;

// Tuning budget. Start from [`awa_bo_config_default`].
typedef struct AwaBoConfig {
  size_t budget;
  size_t initial;
  uint64_t seed;
} AwaBoConfig;

typedef struct AwaImageMetrics {
  double mse;
  // `INFINITY` for identical images.
  double psnr;
  double ssim;
} AwaImageMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next call into this library on the same thread.
const char *awa_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *awa_version(void);

struct AwaAttackConfig awa_attack_config_default(void);

struct AwaBoConfig awa_bo_config_default(void);

// Loads a round directory written by `awa simulate`.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a writable pointer.
enum AwaStatus awa_round_load(const char *dir, struct AwaRound **out);

// # Safety
// `round` must come from [`awa_round_load`] and not be used afterwards. NULL is ignored.
void awa_round_free(struct AwaRound *round);

// Client dataset size `N`, or 0 for NULL.
//
// # Safety
// `round` must be NULL or a live handle.
size_t awa_round_dataset_size(const struct AwaRound *round);

// Number of `f64` values in the ground-truth batch (`N·c·h·w`), or 0 for NULL.
//
// # Safety
// `round` must be NULL or a live handle.
size_t awa_round_batch_len(const struct AwaRound *round);

// Writes `(channels, height, width)` of one sample.
//
// # Safety
// `round` must be a live handle and `shape` must point to 3 writable values.
enum AwaStatus awa_round_input_shape(const struct AwaRound *round, size_t *shape);

// Copies the ground-truth batch (first-epoch order, `[N, c, h, w]`) into `buf`.
//
// # Safety
// `round` must be a live handle and `buf` must hold `len` writable values.
enum AwaStatus awa_round_ground_truth(const struct AwaRound *round, double *buf, size_t len);

// Runs one attack. `q` points to `(q_cv, q_bn, q_fc, q_en, p_mean, p_var)`
// and may be NULL for the unweighted loss. A diverged attack still returns
// a result, with an infinite objective.
//
// # Safety
// `round` and `config` must be live, `q` NULL or 6 readable values, `out` writable.
enum AwaStatus awa_attack_run(const struct AwaRound *round,
                              const struct AwaAttackConfig *config,
                              const double *q,
                              struct AwaAttackResult **out);

// Tunes `Q` with Bayesian optimization over the default search box and
// reruns the weighted attack at the best `Q*`, written to `q_star`.
//
// # Safety
// `round`, `attack` and `bo` must be live, `q_star` must hold 6 writable values, `out` writable.
enum AwaStatus awa_tune(const struct AwaRound *round,
                        const struct AwaAttackConfig *attack,
                        const struct AwaBoConfig *bo,
                        double *q_star,
                        struct AwaAttackResult **out);

// # Safety
// `result` must come from this library and not be used afterwards. NULL is ignored.
void awa_attack_result_free(struct AwaAttackResult *result);

// Final objective `f(Q)`; `INFINITY` after divergence or for NULL.
//
// # Safety
// `result` must be NULL or a live handle.
double awa_attack_result_objective(const struct AwaAttackResult *result);

// # Safety
// `result` must be NULL or a live handle.
bool awa_attack_result_diverged(const struct AwaAttackResult *result);

// Iterations actually run (fewer than requested after divergence).
//
// # Safety
// `result` must be NULL or a live handle.
size_t awa_attack_result_iterations(const struct AwaAttackResult *result);

// Copies the reconstructed batch `[N, c, h, w]` into `buf`.
//
// # Safety
// `result` must be a live handle and `buf` must hold `len` writable values.
enum AwaStatus awa_attack_result_images(const struct AwaAttackResult *result,
                                        double *buf,
                                        size_t len);

// Copies the `Q` the attack ran with into `q` (6 values).
//
// # Safety
// `result` must be a live handle and `q` must hold 6 writable values.
enum AwaStatus awa_attack_result_q(const struct AwaAttackResult *result, double *q);

// Mean metrics of the reconstruction against the round's ground truth,
// after the best one-to-one matching of images.
//
// # Safety
// Both handles must be live and `out` writable.
enum AwaStatus awa_attack_result_matched_metrics(const struct AwaRound *round,
                                                 const struct AwaAttackResult *result,
                                                 struct AwaImageMetrics *out);

// MSE, PSNR and SSIM of one `[channels, height, width]` image pair.
// The reconstruction is clamped to `[0, 1]` first.
//
// # Safety
// `truth` and `recon` must each hold `channels·height·width` readable values; `out` writable.
enum AwaStatus awa_image_metrics(const double *truth,
                                 const double *recon,
                                 size_t channels,
                                 size_t height,
                                 size_t width,
                                 struct AwaImageMetrics *out);

// Expected improvement below `f_min` of a Gaussian with mean `mu` and variance `sigma2`.
double awa_expected_improvement(double mu, double sigma2, double f_min);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AWA_H */
