#ifndef LEVO_LEVO_H
#define LEVO_LEVO_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define LEVO_API __attribute__((visibility("default")))
#else
#define LEVO_API
#endif

typedef enum levo_status {
  LEVO_OK = 0,
  LEVO_ERR_INVALID_ARGUMENT = 1,
  LEVO_ERR_SHAPE_MISMATCH = 2,
  LEVO_ERR_NON_FINITE = 3,
  LEVO_ERR_UNSUPPORTED = 4,
  LEVO_ERR_BAD_MAGIC = 5,
  LEVO_ERR_VERSION_MISMATCH = 6,
  LEVO_ERR_TRUNCATED_PAYLOAD = 7,
  LEVO_ERR_IO = 8,
  LEVO_ERR_CONFIG = 9,
  LEVO_ERR_CONTEXT_OVERFLOW = 10,
  LEVO_ERR_UNREACHABLE_TARGET = 11,
  LEVO_ERR_RUNTIME = 12,
  LEVO_ERR_UNKNOWN_SUBCOMMAND = 13,
  LEVO_ERR_INTERNAL = 14
} levo_status;

/* Opaque pipeline run bound to one validated config and one run directory. */
typedef struct levo_run levo_run;

/* Opaque checkpoint: an ordered name -> float tensor map. */
typedef struct levo_checkpoint levo_checkpoint;

typedef void (*levo_log_fn)(const char* line, void* user);

LEVO_API const char* levo_version(void);
LEVO_API const char* levo_status_name(levo_status status);

/* Message of the last failed call on this thread; "" when none. */
LEVO_API const char* levo_last_error(void);

/* Strings returned through char** out-parameters are released with this. */
LEVO_API void levo_free_string(char* s);

/* "gen-corpus|fit-codec|...|all" and a membership test. */
LEVO_API const char* levo_subcommands(void);
LEVO_API int levo_is_subcommand(const char* name);

/* Fully resolved default config as JSON text. */
LEVO_API levo_status levo_config_defaults(char** out_json);

/* Validates config JSON (NULL or "" means defaults) plus dotted key=value
   overrides; on success returns the canonical JSON and its 16-digit hash. */
LEVO_API levo_status levo_config_resolve(const char* config_json, const char* const* overrides, size_t n_overrides,
                                         char** out_canonical, char** out_hash);

/* out_dir NULL or "" picks runs/<timestamp>. Writes config.json,
   config.hash and seeds.json into the run directory. */
LEVO_API levo_status levo_run_create(const char* config_json, const char* const* overrides, size_t n_overrides,
                                     const char* out_dir, levo_run** out_run);
LEVO_API void levo_run_set_log(levo_run* run, levo_log_fn fn, void* user);
LEVO_API levo_status levo_run_execute(levo_run* run, const char* subcommand);
LEVO_API const char* levo_run_dir(const levo_run* run);
LEVO_API const char* levo_run_config_hash(const levo_run* run);
LEVO_API void levo_run_destroy(levo_run* run);

LEVO_API levo_status levo_checkpoint_load(const char* path, levo_checkpoint** out);
LEVO_API levo_status levo_checkpoint_save(const levo_checkpoint* ckpt, const char* path);
LEVO_API size_t levo_checkpoint_count(const levo_checkpoint* ckpt);
LEVO_API const char* levo_checkpoint_name(const levo_checkpoint* ckpt, size_t index);
LEVO_API levo_status levo_checkpoint_tensor(const levo_checkpoint* ckpt, const char* name, const float** out_data,
                                            size_t* out_size);
/* FNV-1a over every tensor whose name starts with prefix ("" for all). */
LEVO_API uint64_t levo_checkpoint_checksum(const levo_checkpoint* ckpt, const char* prefix);
/* Weighted sum of n checkpoints with identical layouts; weights must be
   non-negative and sum to one. */
LEVO_API levo_status levo_checkpoint_interpolate(const levo_checkpoint* const* ckpts, const double* alpha, size_t n,
                                                 levo_checkpoint** out);
LEVO_API void levo_checkpoint_destroy(levo_checkpoint* ckpt);

#ifdef __cplusplus
}
#endif

#endif
