#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hamburger/corpus.hpp"
#include "hamburger/model.hpp"

namespace hamburger {

// Conditional entropies (nats) of the response tokens under teacher forcing.
struct EntropyProfile {
  std::vector<double> entropies;
};

struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
  bool operator==(const Segment&) const = default;
};

using Segmentation = std::vector<Segment>;

struct SegmenterConfig {
  // Absolute entropy gate; derived from `percentile` when segmenting a corpus.
  double tau = 0.0;
  // A token joins a segment only if its entropy is at most rho times the
  // entropy of the segment's first token.
  double rho = 1.0;
  double percentile = 70.0;

  void validate() const;
};

EntropyProfile conditional_entropies(const BaseModel& model, std::span<const std::int32_t> prompt_ids,
                                     std::span<const std::int32_t> response_ids);

// Nearest-rank percentile of the pooled entropies.
double compute_threshold(std::span<const EntropyProfile> corpus_profiles, double percentile);

// Greedy left-to-right partition; see SegmenterConfig for the join rule.
Segmentation segment(const EntropyProfile& profile, const SegmenterConfig& config, int max_steps);

struct SegmentationReport {
  bool ok = true;
  std::string violation;           // empty when ok
  std::optional<std::size_t> at;   // response index where the violation starts
};

SegmentationReport validate(const Segmentation& seg, std::size_t response_length, int max_steps);

// One corpus example after entropy segmentation.
struct SegmentedExample {
  std::string prompt;
  std::string response;
  std::vector<std::int32_t> prompt_ids;
  std::vector<std::int32_t> response_ids;
  EntropyProfile profile;
  Segmentation segmentation;
};

struct SegmentedCorpus {
  std::vector<SegmentedExample> examples;
  SegmenterConfig config;  // tau filled in
};

// Computes every profile with `model`, derives tau from the pooled
// entropies (unless `fixed_tau` is given) and segments each response.
SegmentedCorpus segment_corpus(const BaseModel& model, const Corpus& corpus,
                               const SegmenterConfig& config, int max_steps,
                               std::optional<double> fixed_tau = std::nullopt);

// Line-delimited records with fields prompt, response, entropies, segments.
void write_segmented_corpus(const SegmentedCorpus& corpus, const std::string& path);
SegmentedCorpus read_segmented_corpus(const std::string& path);

// Every response token as its own segment.
Segmentation singleton_segmentation(std::size_t response_length);

}  // namespace hamburger
