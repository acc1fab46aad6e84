#include "hamburger/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "hamburger/error.hpp"
#include "hamburger/ops.hpp"
#include "hamburger/tokenizer.hpp"
#include "json.hpp"

namespace hamburger {

void SegmenterConfig::validate() const {
  if (!(rho > 0.0 && rho <= 1.0)) fail(ErrorKind::configuration, "segmenter field 'rho': must lie in (0, 1]");
  if (!(tau >= 0.0)) fail(ErrorKind::configuration, "segmenter field 'tau': must be >= 0");
  if (!(percentile >= 0.0 && percentile <= 100.0)) {
    fail(ErrorKind::configuration, "segmenter field 'percentile': must lie in [0, 100]");
  }
}

EntropyProfile conditional_entropies(const BaseModel& model, std::span<const std::int32_t> prompt_ids,
                                     std::span<const std::int32_t> response_ids) {
  EntropyProfile profile;
  if (response_ids.empty()) return profile;
  if (prompt_ids.empty()) fail(ErrorKind::argument, "conditional_entropies: empty prompt");
  nn::NoGradGuard guard;
  // Row N-1+i of the teacher-forced stream predicts response token i.
  std::vector<std::int32_t> stream(prompt_ids.begin(), prompt_ids.end());
  stream.insert(stream.end(), response_ids.begin(), response_ids.end() - 1);
  std::vector<std::int64_t> positions(stream.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int64_t>(i);
  const SequenceOutput out = model.forward(model.embed_rows(stream), positions);
  const nn::Var rows = nn::slice_rows(out.hidden, prompt_ids.size() - 1, response_ids.size());
  const nn::Var logits = model.lm_head(rows);
  profile.entropies.reserve(response_ids.size());
  for (std::size_t i = 0; i < response_ids.size(); ++i) {
    profile.entropies.push_back(nn::entropy_of_logits(logits.value().row(i)));
  }
  return profile;
}

double compute_threshold(std::span<const EntropyProfile> corpus_profiles, double percentile) {
  if (!(percentile >= 0.0 && percentile <= 100.0)) {
    fail(ErrorKind::argument, "compute_threshold: percentile outside [0, 100]");
  }
  std::vector<double> pooled;
  for (const auto& p : corpus_profiles) {
    pooled.insert(pooled.end(), p.entropies.begin(), p.entropies.end());
  }
  if (pooled.empty()) fail(ErrorKind::argument, "compute_threshold: empty corpus");
  std::sort(pooled.begin(), pooled.end());
  const auto n = static_cast<double>(pooled.size());
  auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, pooled.size());
  return pooled[rank - 1];
}

Segmentation segment(const EntropyProfile& profile, const SegmenterConfig& config, int max_steps) {
  config.validate();
  if (max_steps < 1) fail(ErrorKind::argument, "segment: max_steps must be >= 1");
  Segmentation out;
  const auto& e = profile.entropies;
  const auto cap = static_cast<std::size_t>(max_steps);
  for (std::size_t j = 0; j < e.size(); ++j) {
    if (!out.empty()) {
      Segment& cur = out.back();
      const double first = std::max(e[cur.start], 1e-6);
      if (cur.length < cap && e[j] < config.tau && e[j] <= config.rho * first) {
        ++cur.length;
        continue;
      }
    }
    out.push_back({j, 1});
  }
  return out;
}

SegmentationReport validate(const Segmentation& seg, std::size_t response_length, int max_steps) {
  SegmentationReport report;
  auto violation = [&](std::string what, std::size_t at) {
    report.ok = false;
    report.violation = std::move(what);
    report.at = at;
    return report;
  };
  std::size_t expected = 0;
  for (const Segment& s : seg) {
    if (s.start > expected) return violation("gap violation at index " + std::to_string(expected), expected);
    if (s.start < expected) return violation("overlap violation at index " + std::to_string(s.start), s.start);
    if (s.length == 0 || s.length > static_cast<std::size_t>(max_steps)) {
      return violation("length violation: segment at " + std::to_string(s.start) + " has length " +
                           std::to_string(s.length),
                       s.start);
    }
    expected = s.start + s.length;
  }
  if (expected != response_length) {
    return violation("coverage violation: segments end at " + std::to_string(expected) +
                         ", response has " + std::to_string(response_length) + " tokens",
                     std::min(expected, response_length));
  }
  return report;
}

Segmentation singleton_segmentation(std::size_t response_length) {
  Segmentation seg(response_length);
  for (std::size_t i = 0; i < response_length; ++i) seg[i] = {i, 1};
  return seg;
}

SegmentedCorpus segment_corpus(const BaseModel& model, const Corpus& corpus,
                               const SegmenterConfig& config, int max_steps,
                               std::optional<double> fixed_tau) {
  SegmentedCorpus out;
  out.examples.reserve(corpus.examples.size());
  std::vector<EntropyProfile> profiles;
  for (const auto& ex : corpus.examples) {
    SegmentedExample s;
    s.prompt = ex.prompt;
    s.response = ex.response;
    s.prompt_ids = prompt_ids(ex.prompt);
    s.response_ids = response_ids(ex.response);
    s.profile = conditional_entropies(model, s.prompt_ids, s.response_ids);
    profiles.push_back(s.profile);
    out.examples.push_back(std::move(s));
  }
  out.config = config;
  out.config.tau = fixed_tau ? *fixed_tau : compute_threshold(profiles, config.percentile);
  for (auto& s : out.examples) {
    s.segmentation = segment(s.profile, out.config, max_steps);
    const auto report = validate(s.segmentation, s.response_ids.size(), max_steps);
    if (!report.ok) fail(ErrorKind::invariant, "segment_corpus: " + report.violation);
  }
  return out;
}

void write_segmented_corpus(const SegmentedCorpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write '" + path + "'");
  for (const auto& s : corpus.examples) {
    nlohmann::ordered_json j;
    j["prompt"] = s.prompt;
    j["response"] = s.response;
    j["entropies"] = s.profile.entropies;
    auto segs = nlohmann::ordered_json::array();
    for (const Segment& g : s.segmentation) segs.push_back({g.start, g.length});
    j["segments"] = segs;
    out << j.dump() << '\n';
  }
}

SegmentedCorpus read_segmented_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
  SegmentedCorpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SegmentedExample s;
      s.prompt = j.at("prompt").get<std::string>();
      s.response = j.at("response").get<std::string>();
      s.prompt_ids = prompt_ids(s.prompt);
      s.response_ids = response_ids(s.response);
      s.profile.entropies = j.at("entropies").get<std::vector<double>>();
      for (const auto& g : j.at("segments")) {
        s.segmentation.push_back({g.at(0).get<std::size_t>(), g.at(1).get<std::size_t>()});
      }
      corpus.examples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::data, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

}  // namespace hamburger
