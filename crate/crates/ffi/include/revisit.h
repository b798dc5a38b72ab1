#ifndef REVISIT_H
#define REVISIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum RevisitStatus {
  REVISIT_STATUS_OK = 0,
  REVISIT_STATUS_NULL_ARGUMENT = 1,
  REVISIT_STATUS_INVALID_UTF8 = 2,
  REVISIT_STATUS_USAGE = 3,
  REVISIT_STATUS_IO = 4,
  REVISIT_STATUS_FORMAT = 5,
  REVISIT_STATUS_DETECTOR = 6,
  REVISIT_STATUS_PROVIDER = 7,
  REVISIT_STATUS_PANIC = 8,
} RevisitStatus;

/**
 * Open store: its episodic and object memories plus configuration.
 */
typedef struct RevisitStore RevisitStore;

typedef struct RevisitReplaySummary {
  size_t visits;
  size_t frames;
  size_t events;
  size_t narrations;
  size_t predictions;
} RevisitReplaySummary;

typedef struct RevisitEvalSummary {
  size_t true_positives;
  size_t false_positives;
  size_t false_negatives;
  size_t repetitive;
  double precision;
  double recall;
  double f1;
  double clock_error_mean;
  double distance_error_mean;
} RevisitEvalSummary;

typedef struct RevisitSpatialPhrase {
  /**
   * 1 to 12.
   */
  uint8_t clock;
  double distance_feet;
} RevisitSpatialPhrase;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next library call on the same thread.
 */
const char *revisit_last_error(void);

/**
 * Library version as a static string.
 */
const char *revisit_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void revisit_string_free(char *s);

/**
 * Writes the synthetic three-location benchmark under `out_dir`.
 *
 * # Safety
 * `out_dir` must be a NUL-terminated string.
 */
enum RevisitStatus revisit_generate(uint64_t seed, const char *out_dir);

/**
 * Replays a generated location into `store` with the oracle detector.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `summary` may be null.
 */
enum RevisitStatus revisit_replay(const char *location,
                                  const char *store,
                                  struct RevisitReplaySummary *summary);

/**
 * Scores a prediction file against ground truth with default tolerances.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `report` must be writable.
 */
enum RevisitStatus revisit_evaluate(const char *predictions,
                                    const char *ground_truth,
                                    struct RevisitEvalSummary *report);

/**
 * Clock direction and range of a world point seen from a camera pose given
 * as a row-major 4x4 camera-to-world matrix.
 *
 * # Safety
 * `point` must hold 3 doubles, `pose` 16, and `phrase` must be writable.
 */
enum RevisitStatus revisit_spatial_phrase(const double *point,
                                          const double *pose,
                                          struct RevisitSpatialPhrase *phrase);

/**
 * Opens a store written by a replay.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `handle` writable. On success
 * `*handle` owns the store until passed to [`revisit_store_free`].
 */
enum RevisitStatus revisit_store_open(const char *path, struct RevisitStore **handle);

/**
 * Closes a store. Null is ignored.
 *
 * # Safety
 * `handle` must come from [`revisit_store_open`] and not have been freed.
 */
void revisit_store_free(struct RevisitStore *handle);

/**
 * Number of visits recorded in the store.
 *
 * # Safety
 * `handle` must be a live store and `count` writable.
 */
enum RevisitStatus revisit_store_visit_count(const struct RevisitStore *handle, size_t *count);

/**
 * Answers one query (`scene`, `changes [--since D] [--limit K]`,
 * `where LABEL`) as seen from the last recorded frame.
 *
 * # Safety
 * `handle` must be a live store, `query` a NUL-terminated string and
 * `answer_text` writable. The returned string must be released with
 * [`revisit_string_free`].
 */
enum RevisitStatus revisit_store_ask(const struct RevisitStore *handle,
                                     const char *query,
                                     char **answer_text);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REVISIT_H */
