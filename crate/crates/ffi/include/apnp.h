#ifndef APNP_H
#define APNP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes. Zero is success.
 */
typedef enum ApnpStatus {
  APNP_STATUS_OK = 0,
  APNP_STATUS_NULL_POINTER = 1,
  APNP_STATUS_SIZE = 2,
  APNP_STATUS_PARAMETER = 3,
  APNP_STATUS_ILL_POSED = 4,
  APNP_STATUS_DOMAIN = 5,
  APNP_STATUS_ARCHIVE = 6,
  APNP_STATUS_IO = 7,
  APNP_STATUS_FORMAT = 8,
  /**
   * A Rust panic was caught at the boundary.
   */
  APNP_STATUS_INTERNAL = 99,
} ApnpStatus;

typedef enum ApnpDomain {
  APNP_DOMAIN_GRADIENT = 0,
  APNP_DOMAIN_IMAGE = 1,
} ApnpDomain;

typedef enum ApnpAlgorithm {
  APNP_ALGORITHM_PNP_HQS = 0,
  APNP_ALGORITHM_APNP_HQS = 1,
  APNP_ALGORITHM_PNP_ADMM = 2,
  APNP_ALGORITHM_APNP_ADMM = 3,
} ApnpAlgorithm;

/**
 * Reconstruction settings for one algorithm.
 */
typedef struct ApnpConfig ApnpConfig;

typedef struct ApnpDenoiser ApnpDenoiser;

/**
 * Grayscale image, row-major doubles.
 */
typedef struct ApnpImage ApnpImage;

/**
 * Normalized odd-sized blur kernel.
 */
typedef struct ApnpKernel ApnpKernel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *apnp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *apnp_version(void);

/**
 * Copies `height * width` row-major values from `data`.
 *
 * # Safety
 * `data` must point to `height * width` readable doubles; `out` must be writable.
 */
enum ApnpStatus apnp_image_new(size_t height,
                               size_t width,
                               const double *data,
                               struct ApnpImage **out);

/**
 * # Safety
 * `img` must be a live handle or NULL.
 */
size_t apnp_image_height(const struct ApnpImage *img);

/**
 * # Safety
 * `img` must be a live handle or NULL.
 */
size_t apnp_image_width(const struct ApnpImage *img);

/**
 * Copies the pixels into `dst`, which must hold `len >= height * width` doubles.
 *
 * # Safety
 * `img` must be a live handle; `dst` must point to `len` writable doubles.
 */
enum ApnpStatus apnp_image_read(const struct ApnpImage *img, double *dst, size_t len);

/**
 * # Safety
 * `img` must be NULL or a handle not yet freed.
 */
void apnp_image_free(struct ApnpImage *img);

/**
 * Kernel from `size * size` taps that sum to one.
 *
 * # Safety
 * `taps` must point to `size * size` readable doubles; `out` must be writable.
 */
enum ApnpStatus apnp_kernel_new(size_t size, const double *taps, struct ApnpKernel **out);

/**
 * One of the eight default Gaussian kernels (`index` in 0..8).
 *
 * # Safety
 * `out` must be writable.
 */
enum ApnpStatus apnp_kernel_builtin(size_t index, struct ApnpKernel **out);

/**
 * # Safety
 * `out` must be writable.
 */
enum ApnpStatus apnp_kernel_identity(struct ApnpKernel **out);

/**
 * # Safety
 * `k` must be NULL or a handle not yet freed.
 */
void apnp_kernel_free(struct ApnpKernel *k);

/**
 * # Safety
 * `out` must be writable.
 */
enum ApnpStatus apnp_denoiser_identity(enum ApnpDomain domain, struct ApnpDenoiser **out);

/**
 * Soft thresholding by `weight * sigma^2`.
 *
 * # Safety
 * `out` must be writable.
 */
enum ApnpStatus apnp_denoiser_soft(enum ApnpDomain domain,
                                   double weight,
                                   struct ApnpDenoiser **out);

/**
 * Loads a neural denoiser from a weight archive.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
enum ApnpStatus apnp_denoiser_load(const char *path, struct ApnpDenoiser **out);

/**
 * # Safety
 * `d` must be a live handle.
 */
enum ApnpStatus apnp_denoiser_domain(const struct ApnpDenoiser *d, enum ApnpDomain *domain);

/**
 * # Safety
 * `d` must be NULL or a handle not yet freed.
 */
void apnp_denoiser_free(struct ApnpDenoiser *d);

/**
 * Default settings for `algorithm`.
 *
 * # Safety
 * `out` must be writable.
 */
enum ApnpStatus apnp_config_new(enum ApnpAlgorithm algorithm, struct ApnpConfig **out);

/**
 * Overrides; non-positive or non-finite values are rejected with `Parameter`.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum ApnpStatus apnp_config_set_lambda(struct ApnpConfig *cfg, double lambda);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum ApnpStatus apnp_config_set_schedule_scale(struct ApnpConfig *cfg, double scale);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum ApnpStatus apnp_config_set_sigma_floor(struct ApnpConfig *cfg, double floor);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum ApnpStatus apnp_config_set_iters(struct ApnpConfig *cfg, size_t iters);

/**
 * # Safety
 * `cfg` must be NULL or a handle not yet freed.
 */
void apnp_config_free(struct ApnpConfig *cfg);

/**
 * Simulates `y = (k * x) decimated by scale + noise` with Gaussian noise of
 * standard deviation `sigma` (in [0,1] units) drawn from `seed`.
 *
 * # Safety
 * All handles must be live; `out` must be writable.
 */
enum ApnpStatus apnp_degrade(const struct ApnpImage *x,
                             const struct ApnpKernel *kernel,
                             size_t scale,
                             double sigma,
                             uint64_t seed,
                             struct ApnpImage **out);

/**
 * Restores `y`, observed through `kernel`, decimation by `scale` and noise
 * of level `sigma`. The result is `scale` times larger than `y`, clipped to [0,1].
 *
 * # Safety
 * All handles must be live; `out` must be writable.
 */
enum ApnpStatus apnp_reconstruct(const struct ApnpConfig *cfg,
                                 const struct ApnpImage *y,
                                 const struct ApnpKernel *kernel,
                                 size_t scale,
                                 double sigma,
                                 const struct ApnpDenoiser *denoiser,
                                 struct ApnpImage **out);

/**
 * PSNR (dB, dynamic range 1) after removing `crop` pixels per side.
 *
 * # Safety
 * Handles must be live; `value` must be writable.
 */
enum ApnpStatus apnp_psnr(const struct ApnpImage *a,
                          const struct ApnpImage *b,
                          size_t crop,
                          double *value);

/**
 * Mean SSIM (11x11 Gaussian window) after removing `crop` pixels per side.
 *
 * # Safety
 * Handles must be live; `value` must be writable.
 */
enum ApnpStatus apnp_ssim(const struct ApnpImage *a,
                          const struct ApnpImage *b,
                          size_t crop,
                          double *value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* APNP_H */
