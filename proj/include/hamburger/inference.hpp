#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hamburger/hamburger_model.hpp"

namespace hamburger {

struct GenerationConfig {
  std::size_t max_new_tokens = 256;
  // Micro decoding continues only while 1 - stop_prob >= confidence (and the
  // head itself does not ask to stop). 1.0 reproduces the base model.
  double confidence = 0.0;
  // Benchmark mode: keep decoding through EOS until max_new_tokens.
  bool ignore_eos = false;

  void validate() const;
};

struct MacroStepRecord {
  std::vector<std::int32_t> tokens;
  std::vector<double> stop_probs;
  std::size_t decoder_calls = 0;
  // Cache entries after the base forward that opened this step.
  std::size_t kv_entries = 0;
  double flops_base = 0.0;
  double flops_micro = 0.0;
  double flops_fuse = 0.0;
  // Wall-clock fields; never written to deterministic outputs.
  double base_seconds = 0.0;
  std::vector<double> decoder_seconds;
};

struct GenerationTrace {
  std::size_t prompt_tokens = 0;
  std::vector<MacroStepRecord> steps;

  std::size_t total_tokens() const;
  std::size_t macro_steps() const noexcept { return steps.size(); }
  // Entries the response occupies once every emitted group is committed:
  // one per macro-step.
  std::size_t response_kv_entries() const noexcept { return steps.size(); }
  std::size_t decoder_calls() const;
};

struct GenerationResult {
  std::vector<std::int32_t> tokens;
  GenerationTrace trace;
  std::size_t cache_entries = 0;  // actual entries at termination
};

GenerationResult generate(const HamburgerModel& model, std::span<const std::int32_t> prompt_ids,
                          const GenerationConfig& config);

// Plain greedy decoding with the base model alone (one token per forward).
std::vector<std::int32_t> base_greedy(const BaseModel& model,
                                      std::span<const std::int32_t> prompt_ids,
                                      std::size_t max_new_tokens, bool ignore_eos = false);

// Tokens per macro-step, T / K.
double compression_rate(const GenerationTrace& trace);

struct EvalPrompt {
  std::vector<std::int32_t> prompt_ids;
  std::string reference;  // expected response text (without EOS)
};

struct SweepRow {
  double confidence = 0.0;
  double compression = 1.0;
  double exact_match = 0.0;
  std::size_t tokens = 0;
  std::size_t macro_steps = 0;
};

// One row per confidence level; compression aggregates T / K over prompts.
std::vector<SweepRow> sweep_confidence(const HamburgerModel& model,
                                       std::span<const EvalPrompt> prompts,
                                       std::span<const double> confidences,
                                       std::size_t max_new_tokens);

struct BenchRow {
  double confidence = 0.0;
  std::size_t tokens = 0;
  std::size_t macro_steps = 0;
  double seconds = 0.0;  // decode wall time, prefill excluded
  double tokens_per_second = 0.0;
};

// Decode throughput per confidence level. Every repetition runs each level
// over the whole workload (levels interleaved); the fastest repetition is kept.
std::vector<BenchRow> bench_throughput(const HamburgerModel& model,
                                       std::span<const std::vector<std::int32_t>> prompts,
                                       std::span<const double> confidences,
                                       std::size_t max_new_tokens, std::size_t repetitions,
                                       bool ignore_eos = false);

// Text before the first EOS.
std::string response_text(std::span<const std::int32_t> tokens);

// Line-delimited per-macro-step records: tokens, stop_probs, kv_entries,
// flops_base, flops_micro (plus decoder_calls and flops_fuse).
std::string trace_to_jsonl(const GenerationTrace& trace);
void write_trace(const GenerationTrace& trace, const std::string& path);

}  // namespace hamburger
