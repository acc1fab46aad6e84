#include <cmath>
#include <cstdio>
#include <random>

#include "doctest.h"
#include "hamburger/error.hpp"
#include "hamburger/hamburger_model.hpp"
#include "hamburger/ops.hpp"
#include "hamburger/segmenter.hpp"
#include "hamburger/tokenizer.hpp"
#include "helpers.hpp"

using namespace hamburger;

namespace {

// Independent reference: recomputes every join decision from scratch by
// walking back to the segment start instead of carrying running state.
Segmentation brute_force_segment(const std::vector<double>& e, double tau, double rho, int max_steps) {
  std::vector<int> starts_segment(e.size(), 1);
  for (std::size_t j = 1; j < e.size(); ++j) {
    std::size_t s = j - 1;
    while (!starts_segment[s]) --s;
    const std::size_t len = j - s;
    const bool joins = len < static_cast<std::size_t>(max_steps) && e[j] < tau &&
                       e[j] <= rho * (e[s] > 1e-6 ? e[s] : 1e-6);
    starts_segment[j] = joins ? 0 : 1;
  }
  Segmentation out;
  for (std::size_t j = 0; j < e.size(); ++j) {
    if (starts_segment[j]) {
      out.push_back({j, 1});
    } else {
      ++out.back().length;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("conditional entropy examples") {
  std::vector<double> peaked(260, 0.0);
  peaked[7] = 1000.0;
  CHECK(nn::entropy_of_logits(peaked) == doctest::Approx(0.0));
  const std::vector<double> flat(260, 0.25);
  CHECK(nn::entropy_of_logits(flat) == doctest::Approx(std::log(260.0)).epsilon(1e-14));
  const Tensor z = testutil::random_tensor(1, 260, 3, 2.0);
  double mx = -INFINITY, total = 0.0, ref = 0.0;
  for (double v : z.data()) mx = std::max(mx, v);
  for (double v : z.data()) total += std::exp(v - mx);
  for (double v : z.data()) {
    const double p = std::exp(v - mx) / total;
    ref -= p * std::log(p);
  }
  CHECK(std::abs(nn::entropy_of_logits(z.data()) - ref) < 1e-10);
}

TEST_CASE("conditional_entropies reads the teacher-forced positions") {
  const HamburgerModel m(testutil::tiny_config(), 1);
  const auto prompt = prompt_ids("ab");
  const auto response = response_ids("cd");
  const EntropyProfile prof = conditional_entropies(m.base(), prompt, response);
  REQUIRE(prof.entropies.size() == response.size());
  // Entry i must equal the entropy after prefilling prompt + response[:i].
  std::vector<std::int32_t> stream = prompt;
  for (std::size_t i = 0; i < response.size(); ++i) {
    auto [out, cache] = m.base().prefill(stream, 0);
    CHECK(prof.entropies[i] == doctest::Approx(nn::entropy_of_logits(out.logits->data())).epsilon(1e-10));
    CHECK(prof.entropies[i] >= 0.0);
    stream.push_back(response[i]);
  }
  CHECK(conditional_entropies(m.base(), prompt, {}).entropies.empty());
}

TEST_CASE("compute_threshold examples") {
  const EntropyProfile twos{{2.0, 2.0, 2.0}};
  for (double pct : {0.0, 33.0, 70.0, 100.0}) {
    CHECK(compute_threshold(std::span<const EntropyProfile>(&twos, 1), pct) == 2.0);
  }
  const std::vector<EntropyProfile> ten{{{3, 1, 4, 10}}, {{2, 9, 7}}, {{5, 6, 8}}};
  CHECK(compute_threshold(ten, 70.0) == 7.0);
  CHECK(compute_threshold(ten, 100.0) == 10.0);
  CHECK_THROWS_AS(compute_threshold(std::vector<EntropyProfile>{}, 70.0), Error);
  CHECK_THROWS_AS(compute_threshold(std::vector<EntropyProfile>{{}}, 70.0), Error);
}

TEST_CASE("segment examples") {
  SegmenterConfig cfg{.tau = 1.0, .rho = 0.5};
  CHECK(segment({{2.0, 0.1, 0.2, 1.8, 0.3}}, cfg, 4) == Segmentation{{0, 3}, {3, 2}});
  CHECK(segment({{1.0, 3.0, 2.0}}, cfg, 4) == Segmentation{{0, 1}, {1, 1}, {2, 1}});
  SegmenterConfig loose{.tau = 0.5, .rho = 1.0};
  CHECK(segment({std::vector<double>(6, 0.0)}, loose, 4) == Segmentation{{0, 4}, {4, 2}});
  CHECK(segment({}, loose, 4).empty());
  SegmenterConfig bad{.tau = 1.0, .rho = 0.0};
  CHECK_THROWS_AS(segment({{1.0}}, bad, 4), Error);
}

TEST_CASE("segment matches the brute-force reference on random profiles") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> len(0, 40);
  for (int trial = 0; trial < 1500; ++trial) {
    std::vector<double> e(static_cast<std::size_t>(len(rng)));
    for (double& v : e) v = unit(rng) < 0.1 ? 0.0 : 3.0 * unit(rng) * unit(rng);
    const double tau = 2.5 * unit(rng);
    const double rho = 0.05 + 0.95 * unit(rng);
    const int max_steps = 1 + trial % 6;
    const SegmenterConfig cfg{.tau = tau, .rho = rho};
    const Segmentation got = segment({e}, cfg, max_steps);
    REQUIRE(got == brute_force_segment(e, tau, rho, max_steps));
    REQUIRE(validate(got, e.size(), max_steps).ok);
    REQUIRE(segment({e}, cfg, max_steps) == got);
  }
}

TEST_CASE("segment count is non-increasing in tau when the cap does not bind") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> e(30);
    for (double& v : e) v = unit(rng);
    for (double rho : {1.0, 0.8}) {
      std::size_t prev = e.size() + 1;
      for (double tau = 0.0; tau <= 2.5; tau += 0.05) {
        const std::size_t n = segment({e}, {.tau = tau, .rho = rho}, 30).size();
        CHECK(n <= prev);
        prev = n;
      }
    }
  }
}

TEST_CASE("the max_steps cap can make the segment count grow with tau") {
  const EntropyProfile e{{0.29, 1.97, 0.34, 1.93, 1.41, 0.39, 1.15, 1.52}};
  CHECK(segment(e, {.tau = 1.90, .rho = 1.0}, 4).size() == 4);
  CHECK(segment(e, {.tau = 1.95, .rho = 1.0}, 4).size() == 5);
}

TEST_CASE("validate examples") {
  CHECK(validate({{0, 4}, {4, 2}}, 6, 4).ok);
  const auto gap = validate({{0, 4}, {5, 1}}, 6, 4);
  CHECK_FALSE(gap.ok);
  CHECK(gap.violation.find("gap") != std::string::npos);
  CHECK(gap.at == 4u);
  const auto len = validate({{0, 5}}, 5, 4);
  CHECK_FALSE(len.ok);
  CHECK(len.violation.find("length") != std::string::npos);
  CHECK_FALSE(validate({{0, 2}, {1, 2}}, 3, 4).ok);
  CHECK_FALSE(validate({{0, 2}}, 3, 4).ok);
  CHECK(validate(singleton_segmentation(5), 5, 1).ok);
}

TEST_CASE("segmented corpus round trip") {
  const HamburgerModel m(testutil::tiny_config(), 2);
  const Corpus corpus = synth_corpus("pattern", 3, 4);
  const SegmentedCorpus seg = segment_corpus(m.base(), corpus, {}, 4);
  CHECK(seg.examples.size() == 4);
  CHECK(seg.config.tau > 0.0);
  const std::string path = "segmenter_roundtrip.jsonl";
  write_segmented_corpus(seg, path);
  const SegmentedCorpus back = read_segmented_corpus(path);
  REQUIRE(back.examples.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back.examples[i].prompt == seg.examples[i].prompt);
    CHECK(back.examples[i].segmentation == seg.examples[i].segmentation);
    CHECK(back.examples[i].profile.entropies == seg.examples[i].profile.entropies);
    CHECK(back.examples[i].response_ids.back() == tokens::eos);
  }
  std::remove(path.c_str());
}
