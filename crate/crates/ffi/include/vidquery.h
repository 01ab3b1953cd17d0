#ifndef VIDQUERY_H
#define VIDQUERY_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum VqStatus {
  VQ_STATUS_OK = 0,
  VQ_STATUS_NULL_ARGUMENT = 1,
  VQ_STATUS_INVALID_UTF8 = 2,
  VQ_STATUS_PARSE = 3,
  VQ_STATUS_IO = 4,
  VQ_STATUS_TRACE = 5,
  VQ_STATUS_CONFIG = 6,
  VQ_STATUS_QUERY = 7,
  VQ_STATUS_PANIC = 8,
} VqStatus;

// Opaque engine bound to one loaded trace.
typedef struct VqEngine VqEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a JSONL trace and builds an engine over it.
//
// `config` is null or a list of `key=value` pairs separated by `,`, `;` or
// newlines. The train and held-out fractions select the labeled prefix;
// queries run on the remainder. On success `*out` owns a new engine.
//
// # Safety
// `path` and `config` are null or NUL-terminated strings. `out` is a valid
// pointer to writable storage.
enum VqStatus vq_engine_open(const char *path,
                             double train_fraction,
                             double heldout_fraction,
                             const char *config,
                             struct VqEngine **out);

// Releases an engine. Null is ignored.
//
// # Safety
// `engine` is null or was returned by [`vq_engine_open`] and not yet freed.
void vq_engine_free(struct VqEngine *engine);

// Number of frames in the engine's trace, or 0 for null.
//
// # Safety
// `engine` is null or a live engine.
size_t vq_engine_frame_count(const struct VqEngine *engine);

// Runs one FrameQL query and stores its JSON report in `*out_json`.
//
// # Safety
// `engine` is a live engine, `sql` a NUL-terminated string and `out_json` a
// valid pointer. The returned string is freed with [`vq_string_free`].
enum VqStatus vq_engine_query(const struct VqEngine *engine, const char *sql, char **out_json);

// Parses FrameQL and stores its canonical text in `*out`.
//
// # Safety
// `sql` is a NUL-terminated string and `out` a valid pointer. The returned
// string is freed with [`vq_string_free`].
enum VqStatus vq_parse_canonical(const char *sql, char **out);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` is null or was returned by this library and not yet freed.
void vq_string_free(char *s);

// Message of the last failed call on this thread, or null.
//
// The pointer stays valid until the next call into this library on the same
// thread and must not be freed.
const char *vq_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VIDQUERY_H */
