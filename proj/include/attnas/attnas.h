/* C interface to the attnas library.
 *
 * Every fallible call returns an attnas_status; on failure the message is
 * available from attnas_last_error() on the same thread until the next call.
 * Strings returned through char** out-parameters are owned by the caller and
 * released with attnas_free_string(). Handles are released with the matching
 * *_free function; passing NULL to a free function is a no-op.
 *
 * Configurations travel as JSON objects. attnas_default_config() returns the
 * full default document for a kind; overlays only need the keys they change.
 */
#ifndef ATTNAS_H
#define ATTNAS_H

#include <stddef.h>
#include <stdint.h>

#if defined(__GNUC__)
#define ATTNAS_API __attribute__((visibility("default")))
#else
#define ATTNAS_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum attnas_status {
  ATTNAS_OK = 0,
  ATTNAS_ERR_CONFIG = 1,
  ATTNAS_ERR_SHAPE = 2,
  ATTNAS_ERR_INPUT = 3,
  ATTNAS_ERR_IO = 4,
  ATTNAS_ERR_PARSE = 5,
  ATTNAS_ERR_VERSION = 6,
  ATTNAS_ERR_NUMERIC = 7,
  ATTNAS_ERR_CONTRACT = 8,
  ATTNAS_ERR_INTERNAL = 9
} attnas_status;

typedef struct attnas_dataset attnas_dataset;
typedef struct attnas_arch attnas_arch;
typedef struct attnas_network attnas_network;

ATTNAS_API const char* attnas_version(void);
ATTNAS_API const char* attnas_last_error(void);
ATTNAS_API const char* attnas_status_name(attnas_status s);
ATTNAS_API void attnas_free_string(char* s);

/* "f32" or "f64". */
ATTNAS_API attnas_status attnas_set_precision(const char* name);
ATTNAS_API const char* attnas_precision(void);
/* Applies ATTNAS_PRECISION when set. */
ATTNAS_API attnas_status attnas_init_precision_from_env(void);

/* Hex FNV-1a digests, used for run manifests. */
ATTNAS_API attnas_status attnas_digest_text(const char* text, char** out);
ATTNAS_API attnas_status attnas_digest_file(const char* path, char** out);

/* ---- datasets ---- */
ATTNAS_API attnas_status attnas_dataset_synth(uint64_t seed, size_t count, size_t image_size, size_t classes,
                                              attnas_dataset** out);
/* Concatenates CIFAR-10 binary batch files; expected_records (0 = any) applies per file. */
ATTNAS_API attnas_status attnas_dataset_load_cifar(const char* const* paths, size_t n_paths,
                                                   size_t expected_records, attnas_dataset** out);
ATTNAS_API attnas_status attnas_dataset_save_cifar(const attnas_dataset* ds, const char* path);
ATTNAS_API attnas_status attnas_dataset_info(const attnas_dataset* ds, size_t* count, size_t* image_size,
                                             size_t* classes);
ATTNAS_API attnas_status attnas_dataset_digest(const attnas_dataset* ds, char** out);
ATTNAS_API void attnas_dataset_free(attnas_dataset* ds);

/* ---- architectures ---- */
ATTNAS_API attnas_status attnas_arch_load(const char* path, attnas_arch** out);
ATTNAS_API attnas_status attnas_arch_from_json(const char* text, attnas_arch** out);
ATTNAS_API attnas_status attnas_arch_save(const attnas_arch* arch, const char* path);
ATTNAS_API attnas_status attnas_arch_to_json(const attnas_arch* arch, char** out);
/* One CSV row per searchable layer: geometry and chosen operation. */
ATTNAS_API attnas_status attnas_arch_layer_table(const attnas_arch* arch, char** out);
/* Parameter count when instantiated at initial_channels (0 keeps the stored widths). */
ATTNAS_API attnas_status attnas_arch_param_count(const attnas_arch* arch, size_t initial_channels, size_t* out);
ATTNAS_API void attnas_arch_free(attnas_arch* arch);

/* ---- configuration ----
 * kind is "search", "train" or "scale". */
ATTNAS_API attnas_status attnas_default_config(const char* kind, char** out);
/* Applies overlay on top of base (NULL base = defaults) and returns the full document. */
ATTNAS_API attnas_status attnas_config_merge(const char* kind, const char* base, const char* overlay, char** out);

/* Macro-architecture JSON (the "macro" key of a search config): a ladder of
 * stages alternating stride 1 and 2 with widths doubling every second stage,
 * or the full-size preset ("table1") at the given image size and classes. */
ATTNAS_API attnas_status attnas_macro_ladder(size_t image_size, size_t channels, size_t stages, size_t layers_per_stage,
                                             size_t classes, char** out);
ATTNAS_API attnas_status attnas_macro_table1(size_t image_size, size_t classes, char** out);
/* Number of discrete architectures in a macro's search space, as a decimal string. */
ATTNAS_API attnas_status attnas_macro_space_size(const char* macro_json, char** out);

/* ---- search ----
 * Runs the CAR search phase (unless disabled) and the classification
 * fine-tune, then discretises. summary_json holds the selected seed, the
 * final validation loss of every seed and the chosen operations. */
ATTNAS_API attnas_status attnas_search(const char* config_json, const attnas_dataset* data, attnas_arch** arch_out,
                                       char** history_csv, char** summary_json);

/* ---- training and evaluation ----
 * report_json: {"params", "best_epoch", "top1_error", "top5_error", "loss", "wall_clock_s"}. */
ATTNAS_API attnas_status attnas_train(const attnas_arch* arch, const char* config_json, const attnas_dataset* train,
                                      const attnas_dataset* test, attnas_network** net_out, char** metrics_csv,
                                      char** report_json);
/* report_json: {"count", "top1_error", "top5_error", "loss", "params"}. */
ATTNAS_API attnas_status attnas_evaluate(const attnas_network* net, const attnas_dataset* data, char** report_json);
ATTNAS_API attnas_status attnas_network_save(const attnas_network* net, const char* path);
ATTNAS_API attnas_status attnas_network_load(const char* path, attnas_network** out);
ATTNAS_API attnas_status attnas_network_arch(const attnas_network* net, attnas_arch** out);
ATTNAS_API void attnas_network_free(attnas_network* net);

/* ---- diagnostics ----
 * only: comma-separated op names, or NULL/"" for all. table_csv columns are
 * op,max_rel_error,trials,pass; failed receives the number of failing ops. */
ATTNAS_API attnas_status attnas_gradcheck_ops(char** out);
ATTNAS_API attnas_status attnas_gradcheck(uint64_t seed, size_t trials, const char* only, char** table_csv,
                                          size_t* failed);
/* metric: "loss" or "acc" for search histories; ignored for training metrics. */
ATTNAS_API attnas_status attnas_plot_svg(const char* csv, const char* metric, char** svg);
/* base may be NULL. table_csv columns are channels,stages,params,top1_acc. */
ATTNAS_API attnas_status attnas_scale(const char* config_json, const attnas_arch* base, const attnas_dataset* train,
                                      const attnas_dataset* test, char** table_csv);

#ifdef __cplusplus
}
#endif

#endif
