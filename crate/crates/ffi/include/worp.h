#ifndef WORP_H
#define WORP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WorpStatus {
  WORP_STATUS_OK = 0,
  WORP_STATUS_NULL_POINTER = 1,
  WORP_STATUS_INVALID_ARGUMENT = 2,
  WORP_STATUS_CONFIG = 3,
  WORP_STATUS_REJECTED_ELEMENT = 4,
  WORP_STATUS_REJECTED_UPDATE = 5,
  WORP_STATUS_MERGE = 6,
  WORP_STATUS_DEGENERATE_INPUT = 7,
  WORP_STATUS_CALIBRATION = 8,
  WORP_STATUS_FORMAT = 9,
  WORP_STATUS_IO = 10,
  WORP_STATUS_OTHER = 11,
  WORP_STATUS_PANIC = 12,
} WorpStatus;

typedef enum WorpFlavor {
  // CountSketch; accepts signed values.
  WORP_FLAVOR_PROJECTION = 2,
  // Space-Saving counters; non-negative values only.
  WORP_FLAVOR_COUNTER = 1,
} WorpFlavor;

typedef enum WorpRDist {
  WORP_R_DIST_EXP1 = 0,
  WORP_R_DIST_UNIFORM01 = 1,
} WorpRDist;

// Opaque without-replacement sample.
typedef struct WorpSample WorpSample;

// Opaque rHH sketch.
typedef struct WorpSketch WorpSketch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` as a
// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
// message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t worp_last_error(char *buf, size_t len);

// Creates a sketch for top-`k` recovery with rHH parameter `psi`.
// Zero `rows`/`width` (projection) or `capacity` (counter) selects the
// derived size.
//
// # Safety
// `out` must point to writable storage for one pointer.
enum WorpStatus worp_sketch_new(enum WorpFlavor flavor_,
                                size_t k,
                                double psi,
                                double delta,
                                uint64_t n,
                                uint64_t seed,
                                size_t rows,
                                size_t width,
                                size_t capacity,
                                struct WorpSketch **out);

// # Safety
// `s` must be null or a live handle from this library.
void worp_sketch_free(struct WorpSketch *s);

// Adds `value` to the (already transformed) key `key`.
//
// # Safety
// `s` must be a live handle.
enum WorpStatus worp_sketch_process(struct WorpSketch *s, uint64_t key, double value);

// Merges `other` into `s`. Both must share a configuration.
//
// # Safety
// Both must be live handles; they may not alias.
enum WorpStatus worp_sketch_merge(struct WorpSketch *s, const struct WorpSketch *other);

// # Safety
// `s` must be a live handle and `out` writable.
enum WorpStatus worp_sketch_estimate(const struct WorpSketch *s, uint64_t key, double *out);

// Sketch size in 64-bit words.
//
// # Safety
// `s` must be a live handle.
size_t worp_sketch_size_words(const struct WorpSketch *s);

// Serializes the sketch. Release the buffer with [`worp_bytes_free`].
//
// # Safety
// `s` must be a live handle; `out_ptr` and `out_len` writable.
enum WorpStatus worp_sketch_serialize(const struct WorpSketch *s,
                                      uint8_t **out_ptr,
                                      size_t *out_len);

// # Safety
// `bytes` must point to `len` readable bytes; `out` writable.
enum WorpStatus worp_sketch_deserialize(const uint8_t *bytes, size_t len, struct WorpSketch **out);

// # Safety
// `ptr`/`len` must come from [`worp_sketch_serialize`], or `ptr` is null.
void worp_bytes_free(uint8_t *ptr, size_t len);

// The per-key scaling draw `r_x` for key bytes `key[0..len]`.
//
// # Safety
// `key` must point to `len` readable bytes; `out` writable.
enum WorpStatus worp_draw_r(const uint8_t *key,
                            size_t len,
                            uint64_t seed,
                            enum WorpRDist dist,
                            double *out);

// Monte Carlo calibration of `Ψ_{n,k,ρ}(δ)` and the collection constant `B`.
//
// # Safety
// `out_psi` and `out_b` must be writable.
enum WorpStatus worp_estimate_psi(size_t n,
                                  size_t k,
                                  double rho,
                                  double delta,
                                  size_t trials,
                                  uint64_t seed,
                                  double *out_psi,
                                  size_t *out_b);

// Draws a size-`k` WORp sample from an element file (`key,value` per
// line). `passes` is 1 or 2; `psi` and `b` come from calibration at
// `(n, k+1, q/p)`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` writable.
enum WorpStatus worp_sample_file(const char *path,
                                 uint8_t passes,
                                 enum WorpFlavor flavor_,
                                 size_t k,
                                 double p,
                                 double psi,
                                 size_t b,
                                 uint64_t n,
                                 uint64_t seed,
                                 struct WorpSample **out);

// # Safety
// `s` must be null or a live handle from this library.
void worp_sample_free(struct WorpSample *s);

// # Safety
// `s` must be a live handle.
size_t worp_sample_len(const struct WorpSample *s);

// # Safety
// `s` must be a live handle.
double worp_sample_tau(const struct WorpSample *s);

// Reads entry `i`. The key pointer borrows from the sample and stays valid
// until the sample is freed.
//
// # Safety
// `s` must be a live handle; the out pointers writable.
enum WorpStatus worp_sample_entry(const struct WorpSample *s,
                                  size_t i,
                                  const uint8_t **key_ptr,
                                  size_t *key_len,
                                  double *frequency);

// Inverse-probability estimate of `Σ f(ν_x)`, with `stat` either `sum` or
// `p<e>` for `|ν|^e`.
//
// # Safety
// `s` must be a live handle, `stat` a NUL-terminated string, `out` writable.
enum WorpStatus worp_sample_estimate(const struct WorpSample *s, const char *stat, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WORP_H */
