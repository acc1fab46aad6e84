#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hamburger/trainer.hpp"

namespace hamburger {

// Cumulative ablation rows: each variant adds one component over the previous.
//   no_taps:       softmax merge, last-layer tap only, stop token
//   softmax_merge: softmax merge, middle taps, stop token
//   stop_token:    cross-attention embedder, middle taps, stop token
//   full:          cross-attention embedder, middle taps, stop head
enum class Variant { no_taps, softmax_merge, stop_token, full };

const char* to_string(Variant variant) noexcept;
Variant variant_from_string(std::string_view name);
const std::vector<Variant>& all_variants();

ModelConfig apply_variant(ModelConfig config, Variant variant);

struct EvalReport {
  TokenAccuracy accuracy;
  double tau = 0.0;
  double mean_segment_length = 0.0;
};

// Segments `corpus` with the model's own base at `tau` and scores
// teacher-forced token accuracy over it.
EvalReport evaluate_segmented(const HamburgerModel& model, const Corpus& corpus,
                              const SegmenterConfig& segmenter, double tau);

struct AblationResult {
  Variant variant = Variant::full;
  EvalReport eval;
  TrainResult training;
};

// Trains `config` under `variant` and evaluates it on config.eval_corpus
// at the training threshold.
AblationResult run_ablation(const TrainConfig& config, Variant variant,
                            const MetricsSink& sink = {});

}  // namespace hamburger
