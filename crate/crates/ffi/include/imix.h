#ifndef IMIX_H
#define IMIX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum ImixDomain {
  IMIX_DOMAIN_SOURCE = 0,
  IMIX_DOMAIN_TARGET = 1,
} ImixDomain;

typedef enum ImixKind {
  IMIX_KIND_WELL = 0,
  IMIX_KIND_UNDER = 1,
} ImixKind;

typedef enum ImixOrder {
  IMIX_ORDER_SSTF = 0,
  IMIX_ORDER_TSSF = 1,
} ImixOrder;

typedef enum ImixSampler {
  IMIX_SAMPLER_CLASS_MIX = 0,
  IMIX_SAMPLER_I_MIX = 1,
} ImixSampler;

// Result code of every fallible call.
typedef enum ImixStatus {
  IMIX_STATUS_OK = 0,
  IMIX_STATUS_NULL_POINTER = 1,
  IMIX_STATUS_DIMENSION = 2,
  IMIX_STATUS_CONFIG = 3,
  IMIX_STATUS_DEGENERATE_INPUT = 4,
  IMIX_STATUS_RANGE = 5,
  IMIX_STATUS_DATA = 6,
  IMIX_STATUS_UNDEFINED_CORRELATION = 7,
  IMIX_STATUS_IO = 8,
  IMIX_STATUS_JSON = 9,
  IMIX_STATUS_INVALID_ARGUMENT = 10,
  IMIX_STATUS_PANIC = 11,
} ImixStatus;

// Opaque smoothed-ECS tracker for both domains.
typedef struct ImixEcsState ImixEcsState;

typedef struct ImixScheduleConfig {
  double a;
  double b;
  // Non-zero selects the reversed CDF for the middle phase.
  uint8_t reversed;
  double eta_min;
  double eta_max;
  size_t total_iters;
  double phase1_end;
  double phase3_start;
} ImixScheduleConfig;

// Read-only view of one labeled image.
typedef struct ImixSample {
  // `3 * height * width` doubles in `[0, 1]`, channel-major.
  const double *image;
  // `height * width` class indices.
  const uint16_t *labels;
} ImixSample;

// Caller-owned output buffers for a mixed sample.
typedef struct ImixMixOutput {
  // `3 * height * width` doubles.
  double *image;
  // `height * width` class indices.
  uint16_t *labels;
  // `height * width` bytes, 1 where the donor was copied.
  uint8_t *mask;
  // Room for `num_classes` class indices; the first `*selected_count` are written.
  uint16_t *selected;
  size_t *selected_count;
} ImixMixOutput;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Static, NUL-terminated version string.
const char *imix_version(void);

// Copies the calling thread's last error message into `buf` (truncated and
// NUL-terminated) and returns its full length in bytes, excluding the NUL.
// Returns 0 when the last call succeeded.
//
// # Safety
// `buf` must be NULL or point to `len` writable bytes.
size_t imix_last_error_message(char *buf, size_t len);

// # Safety
// `out` must be a valid pointer to a double.
enum ImixStatus imix_kcdf(double x, double a, double b, double *out);

// # Safety
// `out` must be a valid pointer to a double.
enum ImixStatus imix_rkcdf(double x, double a, double b, double *out);

// Fills `out` with the default schedule (a = b = 2, ratio 0.7 → 0.3 over K = 2000).
//
// # Safety
// `out` must be a valid pointer.
enum ImixStatus imix_schedule_default(struct ImixScheduleConfig *out);

// # Safety
// `config` and `out` must be valid pointers.
enum ImixStatus imix_eta_at(const struct ImixScheduleConfig *config, size_t iter, double *out);

// Creates a tracker with every class at `1/num_classes` in both domains.
//
// # Safety
// `out` must be a valid pointer; the handle it receives must be released with
// [`imix_ecs_free`].
enum ImixStatus imix_ecs_new(size_t num_classes, double tau, struct ImixEcsState **out);

// # Safety
// `state` must be NULL or a handle from [`imix_ecs_new`] not yet freed.
void imix_ecs_free(struct ImixEcsState *state);

// Folds one raw measurement into `domain`. `present[c] == 0` marks class `c`
// as absent from this measurement; its `raw[c]` is ignored.
//
// # Safety
// `raw` and `present` must each hold `num_classes` elements.
enum ImixStatus imix_ecs_update(struct ImixEcsState *state,
                                enum ImixDomain domain_id,
                                const double *raw,
                                const uint8_t *present,
                                size_t num_classes);

// Copies the smoothed vector of `domain` into `out` (`num_classes` doubles).
//
// # Safety
// `out` must hold `num_classes` doubles.
enum ImixStatus imix_ecs_snapshot(const struct ImixEcsState *state,
                                  enum ImixDomain domain_id,
                                  double *out,
                                  size_t num_classes);

// Raw per-class ECS of a class-major probability map grouped by `labels`.
// Absent classes get `out_present[c] = 0` and `out_ecs[c] = 0`.
//
// # Safety
// `probs` holds `num_classes * height * width` doubles, `labels` `height * width`
// values, and both outputs `num_classes` elements.
enum ImixStatus imix_measure_ecs(const double *probs,
                                 const uint16_t *labels,
                                 size_t num_classes,
                                 size_t height,
                                 size_t width,
                                 double *out_ecs,
                                 uint8_t *out_present);

// ECS-ranked selection over the classes present in `labels`.
//
// # Safety
// `labels` and `out_mask` hold `height * width` elements; `ecs` and
// `out_selected` hold `num_classes`.
enum ImixStatus imix_i_sample(const uint16_t *labels,
                              size_t height,
                              size_t width,
                              size_t num_classes,
                              const double *ecs,
                              double eta,
                              enum ImixKind kind_id,
                              uint8_t *out_mask,
                              uint16_t *out_selected,
                              size_t *out_selected_count);

// Uniform choice of half the classes present in `labels`, seeded by `seed`.
//
// # Safety
// `labels` and `out_mask` hold `height * width` elements; `out_selected` holds
// `num_classes`.
enum ImixStatus imix_class_sample(const uint16_t *labels,
                                  size_t height,
                                  size_t width,
                                  size_t num_classes,
                                  uint64_t seed,
                                  uint8_t *out_mask,
                                  uint16_t *out_selected,
                                  size_t *out_selected_count);

// Mixes a source sample (ground truth) with a target sample (pseudo-labels).
// The order picks the donor and which domain of `ecs` ranks its classes.
//
// # Safety
// All buffers must be sized for `height × width` grids as described on
// [`ImixSample`] and [`ImixMixOutput`]; `ecs` must be a live handle.
enum ImixStatus imix_mix(struct ImixSample source,
                         struct ImixSample target,
                         size_t height,
                         size_t width,
                         size_t num_classes,
                         enum ImixOrder order,
                         enum ImixKind kind_id,
                         enum ImixSampler sampler,
                         const struct ImixEcsState *ecs,
                         double eta,
                         uint64_t seed,
                         struct ImixMixOutput out);

// Runs the synthetic self-training simulation described by `config_json` (an
// empty string or `{}` selects the defaults) and writes `metrics.csv`,
// `ecs_history.csv`, `iou.csv` and `model.bin` into `out_dir`.
//
// # Safety
// Both strings must be valid NUL-terminated UTF-8; `out_miou` may be NULL.
enum ImixStatus imix_simulate(const char *config_json, const char *out_dir, double *out_miou);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IMIX_H */
