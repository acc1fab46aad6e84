#include <random>

#include "doctest.h"
#include "hamburger/cost_model.hpp"
#include "hamburger/error.hpp"
#include "hamburger/inference.hpp"
#include "hamburger/ops.hpp"
#include "hamburger/tokenizer.hpp"
#include "helpers.hpp"
#include "json.hpp"

using namespace hamburger;
using nn::Var;

namespace {

std::vector<std::int32_t> random_prompt(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(1, 12), byte(0, 255);
  std::vector<std::int32_t> p{tokens::bos};
  const int n = len(rng);
  for (int i = 0; i < n; ++i) p.push_back(byte(rng));
  p.push_back(tokens::resp);
  return p;
}

// Forces the stop head to always continue.
void never_stop(HamburgerModel& m) {
  m.parameters().at("stop_head.weight").mutable_value().fill(0.0);
  m.parameters().at("stop_head.bias").mutable_value().fill(-30.0);
}

// Reference macro/micro loop built from the non-incremental pieces:
// full micro_decode recompute, Var-level fuse and decode_step.
std::vector<std::int32_t> reference_generate(const HamburgerModel& m,
                                             std::span<const std::int32_t> prompt,
                                             std::size_t max_new) {
  std::vector<std::int32_t> out;
  auto [step, cache] = m.base().prefill(prompt, 0);
  const auto max_steps = static_cast<std::size_t>(m.config().max_steps);
  while (true) {
    std::vector<std::int32_t> group{static_cast<std::int32_t>(nn::argmax(step.logits->data()))};
    out.push_back(group.back());
    bool done = group.back() == tokens::eos || out.size() >= max_new;
    const DecoderContext ctx = m.decoder().build_context(step.taps);
    while (!done && group.size() < max_steps) {
      const Var prior = m.base().embed_rows(group);
      const Tensor h = m.decoder().micro_decode(ctx, &prior).value();
      group.push_back(static_cast<std::int32_t>(nn::argmax(m.base().lm_head(h).data())));
      out.push_back(group.back());
      done = group.back() == tokens::eos || out.size() >= max_new;
    }
    if (done) return out;
    const Tensor fused = m.embedder().fuse(m.base().embed_rows(group)).value();
    step = m.base().decode_step(
        fused, *cache.last_position() + static_cast<std::int64_t>(group.size()), cache);
  }
}

}  // namespace

TEST_CASE("theta = 1 reproduces base greedy decoding") {
  const HamburgerModel m(testutil::tiny_config(), 1);
  std::mt19937_64 rng(2);
  GenerationConfig gc;
  gc.confidence = 1.0;
  gc.max_new_tokens = 24;
  for (int i = 0; i < 20; ++i) {
    const auto prompt = random_prompt(rng);
    const GenerationResult r = generate(m, prompt, gc);
    CHECK(r.tokens == base_greedy(m.base(), prompt, 24));
    CHECK(compression_rate(r.trace) == 1.0);
    CHECK(r.trace.decoder_calls() == 0);
  }
}

TEST_CASE("generation matches the non-incremental reference loop") {
  HamburgerModel m(testutil::tiny_config(), 3);
  never_stop(m);
  std::mt19937_64 rng(4);
  GenerationConfig gc;
  gc.max_new_tokens = 30;
  for (int i = 0; i < 5; ++i) {
    const auto prompt = random_prompt(rng);
    const GenerationResult r = generate(m, prompt, gc);
    CHECK(r.tokens == reference_generate(m, prompt, 30));
  }
}

TEST_CASE("trace accounting") {
  HamburgerModel m(testutil::tiny_config(), 5);
  never_stop(m);
  std::mt19937_64 rng(6);
  const auto prompt = random_prompt(rng);
  GenerationConfig gc;
  gc.max_new_tokens = 30;
  gc.ignore_eos = true;
  const GenerationResult r = generate(m, prompt, gc);
  const GenerationTrace& t = r.trace;
  CHECK(t.total_tokens() == 30);
  CHECK(r.tokens.size() == 30);
  CHECK(t.macro_steps() == 8);  // 7 full groups of 4, then 2 tokens
  CHECK(t.response_kv_entries() == t.macro_steps());
  CHECK(r.cache_entries == prompt.size() + t.macro_steps() - 1);
  CHECK(compression_rate(t) <= m.config().max_steps);
  CHECK(t.decoder_calls() == t.total_tokens() - t.macro_steps());
  for (std::size_t k = 0; k < t.steps.size(); ++k) {
    const auto& s = t.steps[k];
    CHECK(s.kv_entries == prompt.size() + k);
    CHECK(s.tokens.size() <= 4);
    // Micro FLOPs depend only on the number of micro tokens, never on the cache.
    double expect = 2.0 * m.config().d_model;
    if (s.decoder_calls > 0) expect += flops_context(m.config());
    for (std::size_t j = 1; j <= s.decoder_calls; ++j)
      expect += flops_micro_invocation(m.config(), j);
    CHECK(s.flops_micro == expect);
  }
  CHECK(t.steps[1].flops_base < t.steps[5].flops_base);
  CHECK(t.steps[2].flops_micro == t.steps[6].flops_micro);
  // Same prompt twice: identical trace.
  CHECK(trace_to_jsonl(generate(m, prompt, gc).trace) == trace_to_jsonl(t));
}

TEST_CASE("generation stops at the first EOS") {
  HamburgerModel m(testutil::tiny_config(), 7);
  never_stop(m);
  // Logits are zero except EOS = h0, so EOS wins whenever the first hidden unit is positive.
  Tensor& head = m.parameters().at("base.lm_head").mutable_value();
  head.fill(0.0);
  head(0, tokens::eos) = 1.0;
  for (const char* norm : {"base.final_norm", "decoder.final_norm"}) {
    Tensor& w = m.parameters().at(norm).mutable_value();
    w.fill(0.0);
    w.data()[0] = 1.0;
  }
  std::mt19937_64 rng(12);
  GenerationConfig gc;
  gc.max_new_tokens = 40;
  int stopped = 0;
  for (int i = 0; i < 10; ++i) {
    const GenerationResult r = generate(m, random_prompt(rng), gc);
    const auto first_eos = std::find(r.tokens.begin(), r.tokens.end(), tokens::eos);
    if (first_eos == r.tokens.end()) continue;
    ++stopped;
    CHECK(first_eos + 1 == r.tokens.end());
    CHECK(r.trace.steps.back().tokens.back() == tokens::eos);
  }
  CHECK(stopped > 0);
  CHECK(response_text(std::vector<std::int32_t>{104, 105, tokens::eos, 106}) == "hi");
}

TEST_CASE("capacity and argument errors") {
  ModelConfig c = testutil::tiny_config();
  c.max_context = 12;
  const HamburgerModel m(c, 8);
  const std::vector<std::int32_t> prompt{tokens::bos, 1, 2, tokens::resp};
  GenerationConfig gc;
  gc.confidence = 1.0;
  gc.max_new_tokens = 50;
  gc.ignore_eos = true;
  try {
    generate(m, prompt, gc);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::capacity);
  }
  CHECK_THROWS_AS(generate(m, std::span<const std::int32_t>(), gc), Error);
  gc.confidence = 1.5;
  CHECK_THROWS_AS(generate(m, prompt, gc), Error);
}

TEST_CASE("confidence sweep rows") {
  HamburgerModel m(testutil::tiny_config(), 9);
  std::mt19937_64 rng(10);
  std::vector<EvalPrompt> prompts;
  for (int i = 0; i < 4; ++i) prompts.push_back({random_prompt(rng), "x"});
  const std::vector<double> thetas{0.0, 0.25, 0.5, 0.6, 0.75, 1.0};
  const auto rows = sweep_confidence(m, prompts, thetas, 16);
  REQUIRE(rows.size() == thetas.size());
  CHECK(rows.back().compression == 1.0);
  CHECK(rows[3].confidence == 0.6);
  for (std::size_t i = 1; i < rows.size(); ++i)
    CHECK(rows[i].compression <= rows[i - 1].compression);
  const std::vector<double> unsorted{0.5, 0.1};
  CHECK_THROWS_AS(sweep_confidence(m, prompts, unsorted, 8), Error);
}

TEST_CASE("trace records carry the documented fields") {
  const HamburgerModel m(testutil::tiny_config(), 11);
  const std::vector<std::int32_t> prompt{tokens::bos, 1, tokens::resp};
  GenerationConfig gc;
  gc.max_new_tokens = 6;
  const auto jsonl = trace_to_jsonl(generate(m, prompt, gc).trace);
  const auto first = nlohmann::json::parse(jsonl.substr(0, jsonl.find('\n')));
  for (const char* k : {"tokens", "stop_probs", "kv_entries", "flops_base", "flops_micro"}) {
    CHECK(first.contains(k));
  }
}
