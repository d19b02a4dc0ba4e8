#ifndef GROC_H
#define GROC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Backbone trained on a condensed graph.
 */
typedef enum GrocBackbone {
  GROC_BACKBONE_SGC = 0,
  GROC_BACKBONE_GCN = 1,
  GROC_BACKBONE_MLP = 2,
} GrocBackbone;

/*
 Condensation mode.
 */
typedef enum GrocMode {
  GROC_MODE_GCOND = 0,
  GROC_MODE_GROC = 1,
  GROC_MODE_TIMGROC = 2,
} GrocMode;

/*
 Result of every fallible call.
 */
typedef enum GrocStatus {
  GROC_STATUS_OK = 0,
  GROC_STATUS_NULL_POINTER = 1,
  GROC_STATUS_INVALID_ARGUMENT = 2,
  GROC_STATUS_CONFIG = 3,
  GROC_STATUS_LOAD = 4,
  GROC_STATUS_IO = 5,
  GROC_STATUS_SHAPE = 6,
  GROC_STATUS_NON_FINITE = 7,
  GROC_STATUS_INTERNAL = 8,
  GROC_STATUS_PANIC = 9,
} GrocStatus;

/*
 A condensed graph.
 */
typedef struct GrocCondensed GrocCondensed;

/*
 A run configuration: condensation, backbone and training settings.
 */
typedef struct GrocConfig GrocConfig;

/*
 An original graph with its splits.
 */
typedef struct GrocGraph GrocGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *groc_version(void);

/*
 Message of the most recent failure on this thread, or null if none. Owned by the
 library; valid until the next failing call on this thread.
 */
const char *groc_last_error(void);

/*
 Opens a dataset directory, or a generated graph named `planted:cora[:seed]` or
 `planted:small[:seed]`. Relative directories are also looked up under `GROC_DATA_DIR`.

 # Safety
 `spec` must be a NUL-terminated string; `out` must be writable.
 */
enum GrocStatus groc_graph_open(const char *spec, struct GrocGraph **out);

/*
 # Safety
 `graph` must be null or a handle from [`groc_graph_open`] not yet freed.
 */
void groc_graph_free(struct GrocGraph *graph);

/*
 Writes node, feature and class counts; any output may be null.

 # Safety
 `graph` must be a live handle; non-null outputs must be writable.
 */
enum GrocStatus groc_graph_sizes(const struct GrocGraph *graph,
                                 size_t *nodes,
                                 size_t *features,
                                 size_t *classes);

/*
 A configuration with every default; the dataset field is unused through this interface.

 # Safety
 `out` must be writable.
 */
enum GrocStatus groc_config_new(struct GrocConfig **out);

/*
 Parses a JSON run configuration; missing fields take their defaults, unknown fields are
 rejected.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum GrocStatus groc_config_from_json(const char *json, struct GrocConfig **out);

/*
 # Safety
 `config` must be null or a live handle.
 */
void groc_config_free(struct GrocConfig *config);

/*
 # Safety
 `config` must be a live handle.
 */
enum GrocStatus groc_config_set_mode(struct GrocConfig *config, enum GrocMode mode);

/*
 # Safety
 `config` must be a live handle.
 */
enum GrocStatus groc_config_set_seed(struct GrocConfig *config, uint64_t seed);

/*
 # Safety
 `config` must be a live handle.
 */
enum GrocStatus groc_config_set_backbone(struct GrocConfig *config, enum GrocBackbone backbone);

/*
 Condenses `graph` under `config`.

 # Safety
 `graph` and `config` must be live handles; `out` must be writable.
 */
enum GrocStatus groc_condense(const struct GrocGraph *graph,
                              const struct GrocConfig *config,
                              struct GrocCondensed **out);

/*
 Reads a `condensed.json` file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GrocStatus groc_condensed_read_json(const char *path, struct GrocCondensed **out);

/*
 # Safety
 `condensed` must be null or a live handle.
 */
void groc_condensed_free(struct GrocCondensed *condensed);

/*
 Writes node and feature counts; either output may be null.

 # Safety
 `condensed` must be a live handle; non-null outputs must be writable.
 */
enum GrocStatus groc_condensed_sizes(const struct GrocCondensed *condensed,
                                     size_t *nodes,
                                     size_t *features);

/*
 Copies the row-major `nodes x features` matrix into `buf`, which must hold exactly
 `len` values.

 # Safety
 `condensed` must be a live handle; `buf` must point to `len` writable doubles.
 */
enum GrocStatus groc_condensed_copy_features(const struct GrocCondensed *condensed,
                                             double *buf,
                                             size_t len);

/*
 Copies the row-major `nodes x nodes` weighted adjacency into `buf`.

 # Safety
 `condensed` must be a live handle; `buf` must point to `len` writable doubles.
 */
enum GrocStatus groc_condensed_copy_adjacency(const struct GrocCondensed *condensed,
                                              double *buf,
                                              size_t len);

/*
 Copies the `nodes` class labels into `buf`.

 # Safety
 `condensed` must be a live handle; `buf` must point to `len` writable values.
 */
enum GrocStatus groc_condensed_copy_labels(const struct GrocCondensed *condensed,
                                           size_t *buf,
                                           size_t len);

/*
 Writes the condensed graph as `condensed.json`.

 # Safety
 `condensed` must be a live handle; `path` must be a NUL-terminated string.
 */
enum GrocStatus groc_condensed_write_json(const struct GrocCondensed *condensed, const char *path);

/*
 Trains the configured backbone on `condensed` with `seed`, selects the checkpoint by
 validation accuracy on `graph`, and writes its test accuracy on `graph`.

 # Safety
 `condensed`, `graph` and `config` must be live handles; `accuracy` must be writable.
 `graph` is mutated internally to cache preprocessing, so it must not be used from two
 threads at once.
 */
enum GrocStatus groc_evaluate(const struct GrocCondensed *condensed,
                              struct GrocGraph *graph,
                              const struct GrocConfig *config,
                              uint64_t seed,
                              double *accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GROC_H */
