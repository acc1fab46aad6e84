#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "hamburger/ablation.hpp"
#include "hamburger/cost_model.hpp"
#include "hamburger/error.hpp"
#include "hamburger/hamburger.h"
#include "hamburger/inference.hpp"
#include "hamburger/tokenizer.hpp"
#include "hamburger/trainer.hpp"

struct hb_corpus {
  hamburger::Corpus corpus;
};

struct hb_model {
  std::unique_ptr<hamburger::HamburgerModel> model;
};

struct hb_generation {
  hamburger::GenerationResult result;
};

namespace {

using namespace hamburger;

thread_local std::string last_error;

hb_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::argument: return HB_ERR_ARGUMENT;
    case ErrorKind::dimension: return HB_ERR_DIMENSION;
    case ErrorKind::configuration: return HB_ERR_CONFIGURATION;
    case ErrorKind::vocabulary: return HB_ERR_VOCABULARY;
    case ErrorKind::ordering: return HB_ERR_ORDERING;
    case ErrorKind::capacity: return HB_ERR_CAPACITY;
    case ErrorKind::domain: return HB_ERR_DOMAIN;
    case ErrorKind::data: return HB_ERR_DATA;
    case ErrorKind::numeric: return HB_ERR_NUMERIC;
    case ErrorKind::io: return HB_ERR_IO;
    case ErrorKind::invariant: return HB_ERR_INVARIANT;
  }
  return HB_ERR_INTERNAL;
}

// Runs `body`, translating exceptions into status codes and the thread's last error.
template <typename F>
hb_status guarded(F&& body) {
  last_error.clear();
  try {
    body();
    return HB_OK;
  } catch (const Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return HB_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return HB_ERR_INTERNAL;
  }
}

template <typename T>
void require_arg(const T* p, const char* name) {
  if (p == nullptr) fail(ErrorKind::argument, std::string(name) + " must not be NULL");
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

ModelConfig model_config_or_default(const char* json) {
  if (json == nullptr || *json == '\0') return ModelConfig{};
  ModelConfig c = model_config_from_json(json);
  c.validate();
  return c;
}

SegmenterConfig segmenter_or_default(const char* json) {
  if (json == nullptr || *json == '\0') return SegmenterConfig{};
  return segmenter_config_from_json(json);
}

GenerationConfig generation_config(const hb_generate_options* options) {
  GenerationConfig gc;
  if (options != nullptr) {
    gc.confidence = options->confidence;
    gc.max_new_tokens = options->max_new_tokens;
    gc.ignore_eos = options->ignore_eos != 0;
  }
  gc.validate();
  return gc;
}

MetricsSink make_sink(hb_metrics_callback callback, void* user_data) {
  if (callback == nullptr) return {};
  return [callback, user_data](const StepMetrics& m) {
    const std::string line = metrics_to_json(m);
    callback(line.c_str(), user_data);
  };
}

void fill_accuracy(const EvalReport& report, hb_accuracy* out) {
  out->overall = report.accuracy.overall;
  out->beyond_first =
      report.accuracy.beyond_first.value_or(std::numeric_limits<double>::quiet_NaN());
  out->tokens = report.accuracy.tokens;
  out->beyond_first_tokens = report.accuracy.beyond_first_tokens;
  out->mean_segment_length = report.mean_segment_length;
}

std::vector<EvalPrompt> eval_prompts(const Corpus& corpus) {
  std::vector<EvalPrompt> prompts;
  prompts.reserve(corpus.examples.size());
  for (const auto& ex : corpus.examples) prompts.push_back({prompt_ids(ex.prompt), ex.response});
  return prompts;
}

}  // namespace

extern "C" {

const char* hb_version(void) { return "1.0.0"; }

const char* hb_status_name(hb_status status) {
  switch (status) {
    case HB_OK: return "ok";
    case HB_ERR_ARGUMENT: return "argument error";
    case HB_ERR_DIMENSION: return "dimension error";
    case HB_ERR_CONFIGURATION: return "configuration error";
    case HB_ERR_VOCABULARY: return "vocabulary error";
    case HB_ERR_ORDERING: return "ordering error";
    case HB_ERR_CAPACITY: return "capacity error";
    case HB_ERR_DOMAIN: return "domain error";
    case HB_ERR_DATA: return "data error";
    case HB_ERR_NUMERIC: return "numeric error";
    case HB_ERR_IO: return "i/o error";
    case HB_ERR_INVARIANT: return "invariant violation";
    case HB_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* hb_last_error(void) { return last_error.c_str(); }

void hb_string_free(char* s) { std::free(s); }

hb_status hb_corpus_synth(const char* recipe, uint64_t seed, size_t size, hb_corpus** out) {
  return guarded([&] {
    require_arg(recipe, "recipe");
    require_arg(out, "out");
    *out = new hb_corpus{synth_corpus(recipe, seed, size)};
  });
}

hb_status hb_corpus_load(const char* path, hb_corpus** out) {
  return guarded([&] {
    require_arg(path, "path");
    require_arg(out, "out");
    *out = new hb_corpus{read_corpus(path)};
  });
}

hb_status hb_corpus_save(const hb_corpus* corpus, const char* path) {
  return guarded([&] {
    require_arg(corpus, "corpus");
    require_arg(path, "path");
    write_corpus(corpus->corpus, path);
  });
}

size_t hb_corpus_size(const hb_corpus* corpus) {
  return corpus == nullptr ? 0 : corpus->corpus.examples.size();
}

hb_status hb_corpus_example(const hb_corpus* corpus, size_t index, const char** prompt,
                            const char** response) {
  return guarded([&] {
    require_arg(corpus, "corpus");
    if (index >= corpus->corpus.examples.size()) {
      fail(ErrorKind::argument, "example index " + std::to_string(index) + " out of range");
    }
    const auto& ex = corpus->corpus.examples[index];
    if (prompt != nullptr) *prompt = ex.prompt.c_str();
    if (response != nullptr) *response = ex.response.c_str();
  });
}

void hb_corpus_free(hb_corpus* corpus) { delete corpus; }

hb_status hb_model_create(const char* model_config_json, uint64_t seed, hb_model** out) {
  return guarded([&] {
    require_arg(out, "out");
    const ModelConfig c = model_config_or_default(model_config_json);
    *out = new hb_model{std::make_unique<HamburgerModel>(c, seed)};
  });
}

hb_status hb_model_load(const char* checkpoint_path, hb_model** out) {
  return guarded([&] {
    require_arg(checkpoint_path, "checkpoint_path");
    require_arg(out, "out");
    *out = new hb_model{load_checkpoint(checkpoint_path)};
  });
}

hb_status hb_model_save(const hb_model* model, const char* checkpoint_path) {
  return guarded([&] {
    require_arg(model, "model");
    require_arg(checkpoint_path, "checkpoint_path");
    save_checkpoint(*model->model, checkpoint_path);
  });
}

hb_status hb_model_config(const hb_model* model, char** json_out) {
  return guarded([&] {
    require_arg(model, "model");
    require_arg(json_out, "json_out");
    *json_out = copy_string(to_json_string(model->model->config()));
  });
}

size_t hb_model_parameter_count(const hb_model* model) {
  if (model == nullptr) return 0;
  size_t n = 0;
  for (const auto& p : model->model->parameters().items()) n += p->value().size();
  return n;
}

void hb_model_free(hb_model* model) { delete model; }

hb_status hb_train_config_check(const char* train_config_json, char** normalized_json_out) {
  return guarded([&] {
    require_arg(train_config_json, "train_config_json");
    const TrainConfig c = train_config_from_json(train_config_json);
    if (normalized_json_out != nullptr) *normalized_json_out = copy_string(to_json_string(c));
  });
}

hb_status hb_train(const char* train_config_json, hb_metrics_callback callback, void* user_data,
                   const char* segments_path, hb_model** model_out, hb_train_summary* summary_out) {
  return guarded([&] {
    require_arg(train_config_json, "train_config_json");
    const TrainConfig c = train_config_from_json(train_config_json);
    TrainResult r = run_training(c, make_sink(callback, user_data));
    if (segments_path != nullptr) write_segmented_corpus(r.segmented, segments_path);
    if (summary_out != nullptr) {
      std::size_t tokens = 0;
      std::size_t segments = 0;
      for (const auto& ex : r.segmented.examples) {
        tokens += ex.response_ids.size();
        segments += ex.segmentation.size();
      }
      summary_out->tau = r.tau;
      summary_out->mean_segment_length =
          segments == 0 ? 0.0 : static_cast<double>(tokens) / static_cast<double>(segments);
      summary_out->steps = r.metrics.size();
      summary_out->final_lm_loss = r.metrics.empty() ? 0.0 : r.metrics.back().lm_loss;
      summary_out->final_stop_loss = r.metrics.empty() ? 0.0 : r.metrics.back().stop_loss;
    }
    if (model_out != nullptr) *model_out = new hb_model{std::move(r.model)};
  });
}

hb_status hb_segment(const hb_model* model, const hb_corpus* corpus,
                     const char* segmenter_config_json, double fixed_tau, const char* out_path,
                     hb_segment_summary* summary_out) {
  return guarded([&] {
    require_arg(model, "model");
    require_arg(corpus, "corpus");
    const SegmenterConfig sc = segmenter_or_default(segmenter_config_json);
    std::optional<double> tau;
    if (fixed_tau >= 0.0) tau = fixed_tau;
    const SegmentedCorpus seg = segment_corpus(model->model->base(), corpus->corpus, sc,
                                               model->model->config().max_steps, tau);
    if (out_path != nullptr) write_segmented_corpus(seg, out_path);
    if (summary_out != nullptr) {
      *summary_out = {seg.config.tau, seg.examples.size(), 0, 0, 0.0};
      for (const auto& ex : seg.examples) {
        summary_out->tokens += ex.response_ids.size();
        summary_out->segments += ex.segmentation.size();
      }
      if (summary_out->segments > 0) {
        summary_out->mean_segment_length =
            static_cast<double>(summary_out->tokens) / static_cast<double>(summary_out->segments);
      }
    }
  });
}

hb_generate_options hb_generate_defaults(void) {
  const GenerationConfig gc;
  return {gc.confidence, gc.max_new_tokens, gc.ignore_eos ? 1 : 0};
}

hb_status hb_generate_ids(const hb_model* model, const int32_t* prompt_ids, size_t count,
                          const hb_generate_options* options, hb_generation** out) {
  return guarded([&] {
    require_arg(model, "model");
    require_arg(prompt_ids, "prompt_ids");
    require_arg(out, "out");
    const GenerationConfig gc = generation_config(options);
    *out = new hb_generation{generate(*model->model, std::span(prompt_ids, count), gc)};
  });
}

hb_status hb_generate_text(const hb_model* model, const char* prompt,
                           const hb_generate_options* options, hb_generation** out) {
  return guarded([&] {
    require_arg(model, "model");
    require_arg(prompt, "prompt");
    require_arg(out, "out");
    const GenerationConfig gc = generation_config(options);
    *out = new hb_generation{generate(*model->model, prompt_ids(prompt), gc)};
  });
}

const int32_t* hb_generation_tokens(const hb_generation* g, size_t* count) {
  if (g == nullptr) {
    if (count != nullptr) *count = 0;
    return nullptr;
  }
  if (count != nullptr) *count = g->result.tokens.size();
  return g->result.tokens.data();
}

hb_status hb_generation_text(const hb_generation* g, char** text_out) {
  return guarded([&] {
    require_arg(g, "generation");
    require_arg(text_out, "text_out");
    *text_out = copy_string(response_text(g->result.tokens));
  });
}

size_t hb_generation_macro_steps(const hb_generation* g) {
  return g == nullptr ? 0 : g->result.trace.macro_steps();
}

size_t hb_generation_cache_entries(const hb_generation* g) {
  return g == nullptr ? 0 : g->result.cache_entries;
}

double hb_generation_compression(const hb_generation* g) {
  if (g == nullptr || g->result.trace.macro_steps() == 0) return 0.0;
  return compression_rate(g->result.trace);
}

hb_status hb_generation_trace(const hb_generation* g, char** jsonl_out) {
  return guarded([&] {
    require_arg(g, "generation");
    require_arg(jsonl_out, "jsonl_out");
    *jsonl_out = copy_string(trace_to_jsonl(g->result.trace));
  });
}

hb_status hb_generation_write_trace(const hb_generation* g, const char* path) {
  return guarded([&] {
    require_arg(g, "generation");
    require_arg(path, "path");
    write_trace(g->result.trace, path);
  });
}

size_t hb_generation_decoder_timings(const hb_generation* g, double* seconds, size_t* macro_step,
                                     size_t capacity) {
  if (g == nullptr) return 0;
  size_t n = 0;
  const auto& steps = g->result.trace.steps;
  for (size_t k = 0; k < steps.size(); ++k) {
    for (double s : steps[k].decoder_seconds) {
      if (n < capacity) {
        if (seconds != nullptr) seconds[n] = s;
        if (macro_step != nullptr) macro_step[n] = k;
      }
      ++n;
    }
  }
  return n;
}

void hb_generation_free(hb_generation* g) { delete g; }

hb_status hb_sweep(const hb_model* model, const hb_corpus* eval, const double* confidences,
                   size_t count, size_t max_new_tokens, hb_sweep_row* rows) {
  return guarded([&] {
    require_arg(model, "model");
    require_arg(eval, "eval");
    require_arg(confidences, "confidences");
    require_arg(rows, "rows");
    const auto prompts = eval_prompts(eval->corpus);
    const auto result =
        sweep_confidence(*model->model, prompts, std::span(confidences, count), max_new_tokens);
    for (size_t i = 0; i < result.size(); ++i) {
      rows[i] = {result[i].confidence, result[i].compression, result[i].exact_match,
                 result[i].tokens, result[i].macro_steps};
    }
  });
}

hb_status hb_bench(const hb_model* model, const hb_corpus* prompts, const double* confidences,
                   size_t count, size_t max_new_tokens, size_t repetitions, int ignore_eos,
                   hb_bench_row* rows) {
  return guarded([&] {
    require_arg(model, "model");
    require_arg(prompts, "prompts");
    require_arg(confidences, "confidences");
    require_arg(rows, "rows");
    std::vector<std::vector<std::int32_t>> ids;
    for (const auto& ex : prompts->corpus.examples) ids.push_back(prompt_ids(ex.prompt));
    const auto result = bench_throughput(*model->model, ids, std::span(confidences, count),
                                         max_new_tokens, repetitions, ignore_eos != 0);
    for (size_t i = 0; i < result.size(); ++i) {
      rows[i] = {result[i].confidence, result[i].tokens, result[i].macro_steps, result[i].seconds,
                 result[i].tokens_per_second};
    }
  });
}

hb_status hb_eval_accuracy(const hb_model* model, const hb_corpus* eval,
                           const char* segmenter_config_json, double tau, hb_accuracy* out) {
  return guarded([&] {
    require_arg(model, "model");
    require_arg(eval, "eval");
    require_arg(out, "out");
    const SegmenterConfig sc = segmenter_or_default(segmenter_config_json);
    fill_accuracy(evaluate_segmented(*model->model, eval->corpus, sc, tau), out);
  });
}

hb_status hb_ablate(const char* train_config_json, const char* variant,
                    hb_metrics_callback callback, void* user_data, hb_accuracy* out,
                    hb_model** model_out) {
  return guarded([&] {
    require_arg(train_config_json, "train_config_json");
    require_arg(variant, "variant");
    require_arg(out, "out");
    const TrainConfig c = train_config_from_json(train_config_json);
    AblationResult r =
        run_ablation(c, variant_from_string(variant), make_sink(callback, user_data));
    fill_accuracy(r.eval, out);
    if (model_out != nullptr) *model_out = new hb_model{std::move(r.training.model)};
  });
}

hb_status hb_hamburger_speedup(double n, double base_cost, double micro_cost, double* out) {
  return guarded([&] {
    require_arg(out, "out");
    *out = hamburger_speedup(n, base_cost, micro_cost);
  });
}

hb_status hb_specdec_speedup(double alpha, double depth, double latency_ratio, double* out) {
  return guarded([&] {
    require_arg(out, "out");
    *out = specdec_speedup(alpha, depth, latency_ratio);
  });
}

hb_status hb_flops_at(const char* model_config_json, size_t context_length, hb_flops* out) {
  return guarded([&] {
    require_arg(out, "out");
    const ModelConfig c = model_config_or_default(model_config_json);
    out->base_step = flops_base_step(c, context_length);
    out->micro_step = flops_micro_step(c, context_length);
    out->micro_context = flops_context(c);
    out->fuse = flops_fuse(c, static_cast<std::size_t>(c.max_steps));
  });
}

hb_status hb_reconcile(const hb_generation* run, const hb_generation* baseline,
                       hb_reconcile_report* out) {
  return guarded([&] {
    require_arg(run, "run");
    require_arg(baseline, "baseline");
    require_arg(out, "out");
    const ReconcileReport r = reconcile(run->result.trace, baseline->result.trace);
    *out = {r.mean_tokens_per_step, r.base_cost, r.micro_cost, r.predicted_speedup,
            r.measured_flops_ratio};
  });
}

}  // extern "C"
