#include "hamburger/ablation.hpp"

#include "hamburger/error.hpp"

namespace hamburger {

const char* to_string(Variant variant) noexcept {
  switch (variant) {
    case Variant::no_taps: return "no-taps";
    case Variant::softmax_merge: return "softmax-merge";
    case Variant::stop_token: return "stop-token";
    case Variant::full: return "full";
  }
  return "unknown";
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> variants{Variant::no_taps, Variant::softmax_merge,
                                             Variant::stop_token, Variant::full};
  return variants;
}

Variant variant_from_string(std::string_view name) {
  for (Variant v : all_variants()) {
    if (name == to_string(v)) return v;
  }
  fail(ErrorKind::argument, "unknown variant '" + std::string(name) +
                                "' (expected no-taps, softmax-merge, stop-token or full)");
}

ModelConfig apply_variant(ModelConfig config, Variant variant) {
  const bool cross = variant == Variant::stop_token || variant == Variant::full;
  config.embedder = cross ? EmbedderKind::cross_attention : EmbedderKind::softmax_merge;
  config.stop_mode = variant == Variant::full ? StopMode::head : StopMode::token;
  if (variant == Variant::no_taps) config.tap_layers = {config.n_layers};
  config.validate();
  return config;
}

EvalReport evaluate_segmented(const HamburgerModel& model, const Corpus& corpus,
                              const SegmenterConfig& segmenter, double tau) {
  const SegmentedCorpus seg =
      segment_corpus(model.base(), corpus, segmenter, model.config().max_steps, tau);
  EvalReport report;
  report.tau = tau;
  std::size_t segments = 0;
  std::size_t tokens = 0;
  for (const auto& ex : seg.examples) {
    segments += ex.segmentation.size();
    tokens += ex.response_ids.size();
  }
  if (segments > 0) {
    report.mean_segment_length = static_cast<double>(tokens) / static_cast<double>(segments);
  }
  const auto examples = to_training_examples(seg);
  report.accuracy = eval_token_accuracy(model, examples);
  return report;
}

AblationResult run_ablation(const TrainConfig& config, Variant variant, const MetricsSink& sink) {
  TrainConfig c = config;
  c.model = apply_variant(config.model, variant);
  AblationResult result;
  result.variant = variant;
  result.training = run_training(c, sink);
  result.eval = evaluate_segmented(*result.training.model, c.eval_corpus.load(), c.segmenter,
                                   result.training.tau);
  return result;
}

}  // namespace hamburger
