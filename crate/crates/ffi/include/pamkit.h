#ifndef PAMKIT_H
#define PAMKIT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum PamStatus {
  PAM_STATUS_OK = 0,
  PAM_STATUS_NULL_POINTER = 1,
  PAM_STATUS_INVALID_ARGUMENT = 2,
  PAM_STATUS_IO = 3,
  PAM_STATUS_FORMAT = 4,
  PAM_STATUS_NUMERIC = 5,
  PAM_STATUS_BUFFER_TOO_SMALL = 6,
  PAM_STATUS_PANIC = 7,
} PamStatus;

/**
 * Embedding cache keyed by `dataset/clip`.
 */
typedef struct PamCache PamCache;

/**
 * Trained linear probe.
 */
typedef struct PamProbe PamProbe;

/**
 * Mono audio at a fixed sample rate.
 */
typedef struct PamWaveform PamWaveform;

/**
 * PCEN parameters. `zero_init` seeds the smoother at 0 instead of the
 * first frame.
 */
typedef struct PamPcenParams {
  double smoothing;
  double gain;
  double bias;
  double root;
  double eps;
  bool zero_init;
} PamPcenParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pam_version(void);

/**
 * Length in bytes of the last error message on this thread, without NUL.
 */
size_t pam_last_error_length(void);

/**
 * Copies the last error message (NUL-terminated, truncated to fit) into
 * `buf`. Returns the number of bytes written excluding the NUL.
 *
 * # Safety
 * `buf` must be valid for `cap` bytes.
 */
size_t pam_last_error_message(char *buf, size_t cap);

/**
 * Builds a waveform from `len` samples in `[-1, 1]`.
 *
 * # Safety
 * `samples` must point to `len` floats; `out` must be writable.
 */
enum PamStatus pam_waveform_new(const float *samples,
                                size_t len,
                                uint32_t sample_rate,
                                struct PamWaveform **out);

/**
 * Reads a 16-bit PCM WAV file (multi-channel input is averaged to mono).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PamStatus pam_wav_read(const char *path, struct PamWaveform **out);

/**
 * Writes `wave` as 16-bit PCM WAV.
 *
 * # Safety
 * `wave` must be a live handle; `path` a NUL-terminated string.
 */
enum PamStatus pam_wav_write(const struct PamWaveform *wave, const char *path);

/**
 * Resamples to `target_rate` into a new handle.
 *
 * # Safety
 * `wave` must be a live handle; `out` must be writable.
 */
enum PamStatus pam_waveform_resample(const struct PamWaveform *wave,
                                     uint32_t target_rate,
                                     struct PamWaveform **out);

/**
 * # Safety
 * `wave` must be a live handle or null.
 */
size_t pam_waveform_len(const struct PamWaveform *wave);

/**
 * # Safety
 * `wave` must be a live handle or null.
 */
uint32_t pam_waveform_sample_rate(const struct PamWaveform *wave);

/**
 * Copies the samples into `buf`; `len_out` receives the sample count.
 *
 * # Safety
 * `wave` must be a live handle; `buf` valid for `cap` floats.
 */
enum PamStatus pam_waveform_samples(const struct PamWaveform *wave,
                                    float *buf,
                                    size_t cap,
                                    size_t *len_out);

/**
 * # Safety
 * `wave` must come from this library and not be used afterwards.
 */
void pam_waveform_free(struct PamWaveform *wave);

/**
 * Loads a probe saved as JSON.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PamStatus pam_probe_load(const char *path, struct PamProbe **out);

/**
 * # Safety
 * `probe` must be a live handle or null.
 */
size_t pam_probe_dim(const struct PamProbe *probe);

/**
 * # Safety
 * `probe` must be a live handle or null.
 */
size_t pam_probe_num_classes(const struct PamProbe *probe);

/**
 * Class probabilities of one embedding, in the probe's class order.
 *
 * # Safety
 * `probe` must be a live handle; `x` valid for `dim` floats; `scores` for
 * `cap` doubles.
 */
enum PamStatus pam_probe_predict(const struct PamProbe *probe,
                                 const float *x,
                                 size_t dim,
                                 double *scores,
                                 size_t cap);

/**
 * # Safety
 * `probe` must come from this library and not be used afterwards.
 */
void pam_probe_free(struct PamProbe *probe);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PamStatus pam_cache_load(const char *path, struct PamCache **out);

/**
 * # Safety
 * `cache` must be a live handle or null.
 */
size_t pam_cache_len(const struct PamCache *cache);

/**
 * # Safety
 * `cache` must be a live handle or null.
 */
size_t pam_cache_dim(const struct PamCache *cache);

/**
 * Copies the vector stored under `key` into `buf`.
 *
 * # Safety
 * `cache` must be a live handle; `key` a NUL-terminated string; `buf`
 * valid for `cap` floats.
 */
enum PamStatus pam_cache_get(const struct PamCache *cache, const char *key, float *buf, size_t cap);

/**
 * # Safety
 * `cache` must come from this library and not be used afterwards.
 */
void pam_cache_free(struct PamCache *cache);

/**
 * Binary ROC AUC with ties counted as one half. `labels[i]` is nonzero
 * for positives.
 *
 * # Safety
 * `scores` and `labels` must be valid for `n` elements; `out` writable.
 */
enum PamStatus pam_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Percent reduction of AUC error of the better model relative to its own
 * error.
 *
 * # Safety
 * `out` must be writable.
 */
enum PamStatus pam_error_reduction(double auc_better, double auc_worse, double *out);

struct PamPcenParams pam_pcen_default_params(void);

struct PamPcenParams pam_pcen_surfperch_params(void);

/**
 * PCEN over a row-major `frames × n_mels` energy grid into `out` (same
 * shape). `out` may alias `energies`.
 *
 * # Safety
 * `energies` and `out` must be valid for `frames * n_mels` doubles;
 * `params` must be readable.
 */
enum PamStatus pam_pcen(const double *energies,
                        size_t frames,
                        size_t n_mels,
                        const struct PamPcenParams *params,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAMKIT_H */
