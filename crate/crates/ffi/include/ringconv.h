#ifndef RINGCONV_H
#define RINGCONV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RcMode {
  RC_MODE_STREAMING = 0,
  RC_MODE_BATCH = 1,
} RcMode;

// Result of every fallible call.
typedef enum RcStatus {
  RC_STATUS_OK = 0,
  RC_STATUS_NULL_POINTER = 1,
  RC_STATUS_INVALID_UTF8 = 2,
  RC_STATUS_IO = 3,
  RC_STATUS_PARSE = 4,
  RC_STATUS_VALIDATION = 5,
  RC_STATUS_SHAPE = 6,
  RC_STATUS_SEQUENCE_OVERRUN = 7,
  RC_STATUS_INCOMPLETE_SEQUENCE = 8,
  RC_STATUS_CONFIG = 9,
  RC_STATUS_BUFFER_TOO_SMALL = 10,
  RC_STATUS_PANIC = 11,
} RcStatus;

// Validated model document.
typedef struct RcModel RcModel;

// Streaming network state for one sequence at a time.
typedef struct RcNetwork RcNetwork;

// Work done by one `rc_network_step`.
typedef struct RcStepReport {
  size_t stages_fired;
  uint64_t total_macs;
} RcStepReport;

// Task costs in milliseconds; see `rc_profile_reference`.
typedef struct RcTaskProfile {
  double sample_ms;
  double conv_ms;
  double feedforward_ms;
  double communication_ms;
  double mac_ns;
  double per_interval_overhead_ms;
  double sampling_rate_hz;
} RcTaskProfile;

// Simulated schedule summary.
typedef struct RcScheduleSummary {
  double latency_ms;
  double max_step_ms;
  size_t deadline_misses;
} RcScheduleSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Description of the most recent failure on this thread, or NULL.
// The string stays valid until the next failing call on the same thread.
const char *rc_last_error_message(void);

// Static name of a status code.
const char *rc_status_name(enum RcStatus status);

// Parses and validates a NUL-terminated JSON model document.
enum RcStatus rc_model_load_json(const char *json, struct RcModel **out);

enum RcStatus rc_model_load_file(const char *path, struct RcModel **out);

// Releases a model. NULL is ignored.
void rc_model_free(struct RcModel *model);

enum RcStatus rc_model_input_shape(const struct RcModel *model, size_t *length, size_t *channels);

enum RcStatus rc_model_num_classes(const struct RcModel *model, size_t *classes);

enum RcStatus rc_model_param_count(const struct RcModel *model, size_t *count);

enum RcStatus rc_model_weight_bytes(const struct RcModel *model, size_t *bytes);

// Working-memory total for `mode`. `samples == 0` plans for the declared length.
enum RcStatus rc_model_memory_bytes(const struct RcModel *model,
                                    enum RcMode mode,
                                    size_t samples,
                                    size_t *bytes);

// Creates a network for `model`. The network copies what it needs, so the
// model may be freed afterwards.
enum RcStatus rc_network_new(const struct RcModel *model, struct RcNetwork **out);

void rc_network_free(struct RcNetwork *net);

// Pushes one sample of `channels` values. `report` may be NULL.
enum RcStatus rc_network_step(struct RcNetwork *net,
                              const float *sample,
                              size_t channels,
                              struct RcStepReport *report);

// Writes class probabilities once the full sequence has been stepped.
// `written` receives the class count even when the buffer is too small.
enum RcStatus rc_network_finalize(const struct RcNetwork *net,
                                  float *probs,
                                  size_t capacity,
                                  size_t *written);

enum RcStatus rc_network_reset(struct RcNetwork *net);

enum RcStatus rc_network_samples_seen(const struct RcNetwork *net, size_t *seen);

// Whole-sequence inference over a row-major `rows × channels` matrix.
enum RcStatus rc_batch_infer(const struct RcModel *model,
                             const float *input,
                             size_t rows,
                             size_t channels,
                             float *probs,
                             size_t capacity,
                             size_t *written);

// The measured 119 Hz reference profile.
enum RcStatus rc_profile_reference(struct RcTaskProfile *out);

// Simulates one sequence of `samples` samples (0 = declared length).
enum RcStatus rc_simulate(const struct RcModel *model,
                          const struct RcTaskProfile *profile,
                          enum RcMode mode,
                          size_t samples,
                          struct RcScheduleSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RINGCONV_H */
