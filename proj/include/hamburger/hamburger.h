#ifndef HAMBURGER_H
#define HAMBURGER_H

/* C interface to the hierarchical autoregressive model library.
 *
 * Objects are opaque handles created by hb_*_create / hb_*_load / hb_*_run
 * and released with the matching hb_*_free (which accepts NULL).
 * Every fallible call returns an hb_status; on failure the message is
 * available from hb_last_error() on the same thread until the next call.
 * Strings returned through char** are heap copies released with
 * hb_string_free. Configuration is passed as JSON text. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define HB_API __declspec(dllexport)
#else
#define HB_API __attribute__((visibility("default")))
#endif

typedef enum hb_status {
  HB_OK = 0,
  HB_ERR_ARGUMENT = 1,
  HB_ERR_DIMENSION = 2,
  HB_ERR_CONFIGURATION = 3,
  HB_ERR_VOCABULARY = 4,
  HB_ERR_ORDERING = 5,
  HB_ERR_CAPACITY = 6,
  HB_ERR_DOMAIN = 7,
  HB_ERR_DATA = 8,
  HB_ERR_NUMERIC = 9,
  HB_ERR_IO = 10,
  HB_ERR_INVARIANT = 11,
  HB_ERR_INTERNAL = 12
} hb_status;

typedef struct hb_corpus hb_corpus;
typedef struct hb_model hb_model;
typedef struct hb_generation hb_generation;

HB_API const char* hb_version(void);
HB_API const char* hb_status_name(hb_status status);
HB_API const char* hb_last_error(void);
HB_API void hb_string_free(char* s);

/* Corpora: line-delimited {"prompt", "response"} records. */
HB_API hb_status hb_corpus_synth(const char* recipe, uint64_t seed, size_t size, hb_corpus** out);
HB_API hb_status hb_corpus_load(const char* path, hb_corpus** out);
HB_API hb_status hb_corpus_save(const hb_corpus* corpus, const char* path);
HB_API size_t hb_corpus_size(const hb_corpus* corpus);
/* Borrowed pointers, valid while the corpus lives. */
HB_API hb_status hb_corpus_example(const hb_corpus* corpus, size_t index, const char** prompt,
                                   const char** response);
HB_API void hb_corpus_free(hb_corpus* corpus);

/* Models. An empty or NULL config selects the defaults. */
HB_API hb_status hb_model_create(const char* model_config_json, uint64_t seed, hb_model** out);
HB_API hb_status hb_model_load(const char* checkpoint_path, hb_model** out);
HB_API hb_status hb_model_save(const hb_model* model, const char* checkpoint_path);
HB_API hb_status hb_model_config(const hb_model* model, char** json_out);
HB_API size_t hb_model_parameter_count(const hb_model* model);
HB_API void hb_model_free(hb_model* model);

/* Training. The callback receives one JSON metrics record per optimizer step. */
typedef void (*hb_metrics_callback)(const char* json_record, void* user_data);

typedef struct hb_train_summary {
  double tau;
  double mean_segment_length;
  size_t steps;
  double final_lm_loss;
  double final_stop_loss;
} hb_train_summary;

/* Parses and validates a training config; on failure the message names the field. */
HB_API hb_status hb_train_config_check(const char* train_config_json, char** normalized_json_out);
/* segments_path may be NULL; otherwise the fused-phase segmentation is written there. */
HB_API hb_status hb_train(const char* train_config_json, hb_metrics_callback callback,
                          void* user_data, const char* segments_path, hb_model** model_out,
                          hb_train_summary* summary_out);

/* Entropy segmentation of a corpus with the model's base. fixed_tau < 0 derives
 * tau from the configured percentile. */
typedef struct hb_segment_summary {
  double tau;
  size_t examples;
  size_t tokens;
  size_t segments;
  double mean_segment_length;
} hb_segment_summary;

HB_API hb_status hb_segment(const hb_model* model, const hb_corpus* corpus,
                            const char* segmenter_config_json, double fixed_tau,
                            const char* out_path, hb_segment_summary* summary_out);

/* Generation. */
typedef struct hb_generate_options {
  double confidence;
  size_t max_new_tokens;
  int ignore_eos;
} hb_generate_options;

HB_API hb_generate_options hb_generate_defaults(void);
HB_API hb_status hb_generate_text(const hb_model* model, const char* prompt,
                                  const hb_generate_options* options, hb_generation** out);
HB_API hb_status hb_generate_ids(const hb_model* model, const int32_t* prompt_ids, size_t count,
                                 const hb_generate_options* options, hb_generation** out);
/* Borrowed; valid while the generation lives. */
HB_API const int32_t* hb_generation_tokens(const hb_generation* g, size_t* count);
HB_API hb_status hb_generation_text(const hb_generation* g, char** text_out);
HB_API size_t hb_generation_macro_steps(const hb_generation* g);
HB_API size_t hb_generation_cache_entries(const hb_generation* g);
HB_API double hb_generation_compression(const hb_generation* g);
HB_API hb_status hb_generation_trace(const hb_generation* g, char** jsonl_out);
HB_API hb_status hb_generation_write_trace(const hb_generation* g, const char* path);
/* Decoder wall time of each micro-step invocation in order, with its macro-step index. */
HB_API size_t hb_generation_decoder_timings(const hb_generation* g, double* seconds,
                                            size_t* macro_step, size_t capacity);
HB_API void hb_generation_free(hb_generation* g);

/* Confidence sweep over a held-out corpus. rows holds count entries. */
typedef struct hb_sweep_row {
  double confidence;
  double compression;
  double exact_match;
  size_t tokens;
  size_t macro_steps;
} hb_sweep_row;

HB_API hb_status hb_sweep(const hb_model* model, const hb_corpus* eval, const double* confidences,
                          size_t count, size_t max_new_tokens, hb_sweep_row* rows);

/* Decode throughput; rows holds count entries. */
typedef struct hb_bench_row {
  double confidence;
  size_t tokens;
  size_t macro_steps;
  double seconds;
  double tokens_per_second;
} hb_bench_row;

HB_API hb_status hb_bench(const hb_model* model, const hb_corpus* prompts,
                          const double* confidences, size_t count, size_t max_new_tokens,
                          size_t repetitions, int ignore_eos, hb_bench_row* rows);

/* Teacher-forced token accuracy on a corpus segmented at tau. */
typedef struct hb_accuracy {
  double overall;
  double beyond_first; /* NaN when no micro position >= 2 exists */
  size_t tokens;
  size_t beyond_first_tokens;
  double mean_segment_length;
} hb_accuracy;

HB_API hb_status hb_eval_accuracy(const hb_model* model, const hb_corpus* eval,
                                  const char* segmenter_config_json, double tau, hb_accuracy* out);

/* Ablation: variant is one of no-taps, softmax-merge, stop-token, full. */
HB_API hb_status hb_ablate(const char* train_config_json, const char* variant,
                           hb_metrics_callback callback, void* user_data, hb_accuracy* out,
                           hb_model** model_out);

/* Cost model. */
HB_API hb_status hb_hamburger_speedup(double n, double base_cost, double micro_cost, double* out);
HB_API hb_status hb_specdec_speedup(double alpha, double depth, double latency_ratio, double* out);

typedef struct hb_flops {
  double base_step;
  double micro_step;
  double micro_context;
  double fuse;
} hb_flops;

HB_API hb_status hb_flops_at(const char* model_config_json, size_t context_length, hb_flops* out);

typedef struct hb_reconcile_report {
  double n_bar;
  double base_cost;
  double micro_cost;
  double predicted;
  double measured;
} hb_reconcile_report;

HB_API hb_status hb_reconcile(const hb_generation* run, const hb_generation* baseline,
                              hb_reconcile_report* out);

#ifdef __cplusplus
}
#endif

#endif
