#ifndef RAP_RAP_H
#define RAP_RAP_H

/* C interface to the reinforced attention policy library.
 *
 * Every fallible call returns a rap_status. On failure the message (and, for
 * configuration errors, the offending "section.key") is kept per thread and
 * read back with rap_last_error / rap_last_error_key until the next call on
 * that thread. Strings returned through char** are owned by the caller and
 * released with rap_string_free. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define RAP_API __declspec(dllexport)
#else
#define RAP_API __attribute__((visibility("default")))
#endif

typedef enum rap_status {
  RAP_OK = 0,
  RAP_ERR_ARGUMENT = 1, /* null handle or malformed argument */
  RAP_ERR_CONFIG = 2,
  RAP_ERR_IO = 3,
  RAP_ERR_DATA = 4,
  RAP_ERR_SHAPE = 5,
  RAP_ERR_DIVERGED = 6,
  RAP_ERR_INTERNAL = 7
} rap_status;

typedef struct rap_config rap_config;
typedef struct rap_dataset rap_dataset;
typedef struct rap_model rap_model;

RAP_API const char* rap_version(void);
RAP_API const char* rap_status_name(rap_status status);
RAP_API const char* rap_last_error(void);
RAP_API const char* rap_last_error_key(void);
RAP_API void rap_string_free(char* s);

/* Configuration: sections [data] [backbone] [policy] [train] [eval]. */
RAP_API rap_status rap_config_new(rap_config** out);
RAP_API rap_status rap_config_load(const char* path, rap_config** out);
RAP_API rap_status rap_config_parse(const char* text, rap_config** out);
RAP_API rap_status rap_config_clone(const rap_config* config, rap_config** out);
/* key is "section.key" */
RAP_API rap_status rap_config_set(rap_config* config, const char* key, const char* value);
RAP_API rap_status rap_config_get(const rap_config* config, const char* key, char** value);
/* Copies one whole section from src into dst. */
RAP_API rap_status rap_config_copy_section(rap_config* dst, const rap_config* src, const char* section);
RAP_API rap_status rap_config_echo(const rap_config* config, char** text);
RAP_API rap_status rap_config_validate(const rap_config* config);
RAP_API void rap_config_free(rap_config* config);

typedef struct rap_dataset_info {
  uint64_t count;
  int32_t hw;
  int32_t num_classes;
  int32_t train_classes;
  int32_t val_classes;
  int32_t test_classes;
  uint64_t train_images;
  uint64_t val_images;
  uint64_t test_images;
} rap_dataset_info;

/* Builds or loads the dataset described by the [data] section. */
RAP_API rap_status rap_dataset_load(const rap_config* config, rap_dataset** out);
RAP_API rap_status rap_dataset_info_get(const rap_dataset* dataset, rap_dataset_info* info);
RAP_API rap_status rap_dataset_save_manifest(const rap_dataset* dataset, const char* dir);
/* Standard CIFAR binary records; images must be 32x32. */
RAP_API rap_status rap_dataset_save_cifar(const rap_dataset* dataset, const char* path);
RAP_API void rap_dataset_free(rap_dataset* dataset);

typedef void (*rap_line_fn)(const char* line, void* user);

typedef struct rap_train_summary {
  int64_t iterations;
  int64_t best_iteration;
  double best_val_accuracy;
} rap_train_summary;

/* Writes metrics.jsonl and best.rapc into out_dir (created if needed); on
 * divergence also last_good.rapc, and returns RAP_ERR_DIVERGED. on_metric
 * receives every metrics line and may be null. */
RAP_API rap_status rap_train(const rap_config* config, const rap_dataset* dataset, const char* out_dir,
                             rap_line_fn on_metric, void* user, rap_train_summary* summary);

RAP_API rap_status rap_model_new(const rap_config* config, uint64_t seed, rap_model** out);
RAP_API rap_status rap_model_load(const char* checkpoint_path, rap_model** out);
RAP_API rap_status rap_model_save(const rap_model* model, const char* checkpoint_path);
/* The configuration echoed into the checkpoint. */
RAP_API rap_status rap_model_config(const rap_model* model, rap_config** out);
RAP_API void rap_model_free(rap_model* model);

typedef struct rap_eval_summary {
  uint64_t count;
  double accuracy;
  double half_width;
  double identity_accuracy; /* acc(0) */
} rap_eval_summary;

/* Evaluates with the [eval] section of `config` (and its [data] geometry).
 * identity != 0 forces all-ones attention. report receives the JSON report
 * and may be null. */
RAP_API rap_status rap_evaluate(rap_model* model, const rap_dataset* dataset, const rap_config* config,
                                int identity, rap_eval_summary* summary, char** report);

typedef struct rap_ablation_cell {
  int32_t steps;
  double alpha;
  int32_t attention;
} rap_ablation_cell;

/* Trains and evaluates every cell for `seeds` seeds (train.seed + s). Each
 * finished row is passed to on_row as JSON; table receives the text table. */
RAP_API rap_status rap_ablate(const rap_config* base, const rap_dataset* dataset, const rap_ablation_cell* cells,
                              size_t cell_count, int seeds, rap_line_fn on_row, void* user, char** table);

typedef struct rap_attention_summary {
  int32_t steps;
  int32_t h;
  int32_t w;
  uint64_t images;
  double hit_first; /* patch-hit score after one step */
  double hit_last;  /* after T steps */
  double uniform_hit;
} rap_attention_summary;

/* Deterministic rollout over the first `images` images of `split` ("train",
 * "val" or "test"; classes or image split as the dataset defines). Writes the
 * per-step maps to dump_path when non-null. */
RAP_API rap_status rap_inspect_attention(rap_model* model, const rap_dataset* dataset, const char* split,
                                         size_t images, const char* dump_path, rap_attention_summary* summary);

#ifdef __cplusplus
}
#endif

#endif
