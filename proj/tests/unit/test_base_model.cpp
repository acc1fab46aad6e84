#include <set>

#include "doctest.h"
#include "hamburger/error.hpp"
#include "hamburger/hamburger_model.hpp"
#include "hamburger/ops.hpp"
#include "hamburger/tokenizer.hpp"
#include "helpers.hpp"

using namespace hamburger;
using nn::Var;

namespace {

std::vector<std::int64_t> iota_positions(std::size_t n, std::int64_t start = 0) {
  std::vector<std::int64_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = start + static_cast<std::int64_t>(i);
  return p;
}

}  // namespace

TEST_CASE("config validation names the field") {
  ModelConfig c = testutil::tiny_config();
  c.d_model = 15;
  try {
    c.validate();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("d_model") != std::string::npos);
  }
  c = testutil::tiny_config();
  c.tap_layers = {1};
  CHECK_THROWS_AS(c.validate(), Error);
  c = testutil::tiny_config();
  c.max_steps = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = testutil::tiny_config();
  CHECK(model_config_from_json(to_json_string(c)) == c);
  CHECK_THROWS_AS(model_config_from_json(R"({"d_modle": 8})"), Error);
}

TEST_CASE("embed examples") {
  const HamburgerModel m(testutil::tiny_config(), 1);
  const BaseModel& base = m.base();
  const Tensor pad = base.embed(tokens::pad);
  for (std::size_t c = 0; c < pad.size(); ++c) CHECK(pad[c] == base.embedding_table().value()(256, c));
  CHECK(testutil::max_abs_diff(base.embed(42), base.embed(42)) == 0.0);
  std::set<std::vector<double>> rows;
  for (int id = 0; id < 260; ++id) {
    const Tensor e = base.embed(id);
    rows.insert(std::vector<double>(e.data().begin(), e.data().end()));
  }
  CHECK(rows.size() == 260);
  try {
    base.embed(260);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::vocabulary);
  }
}

TEST_CASE("prefill and decode_step agree with the batch forward") {
  const HamburgerModel m(testutil::tiny_config(), 2);
  const BaseModel& base = m.base();
  const std::vector<std::int32_t> ids{tokens::bos, 10, 20, 30, 40};

  // 1-token prefill is bitwise a decode_step on an empty cache.
  const std::int32_t first[] = {ids[0]};
  auto [p1, c1] = base.prefill(first, 0);
  KVCache empty(static_cast<std::size_t>(base.config().n_layers));
  const StepOutput d1 = base.decode_step(base.embed(ids[0]), 0, empty);
  CHECK(testutil::max_abs_diff(*p1.logits, *d1.logits) == 0.0);
  CHECK(empty.entries() == 1);

  auto [full, full_cache] = base.prefill(ids, 0);
  CHECK(full_cache.entries() == ids.size());
  CHECK(full_cache.positions() == iota_positions(ids.size()));

  const std::span<const std::int32_t> head(ids.data(), 4);
  auto [part, cache] = base.prefill(head, 0);
  const StepOutput inc = base.decode_step(base.embed(ids[4]), 4, cache);
  CHECK(testutil::max_abs_diff(*inc.logits, *full.logits) < 1e-10);
  CHECK(testutil::max_abs_diff(inc.last_hidden, full.last_hidden) < 1e-10);

  // Same for the differentiable training path.
  const SequenceOutput seq = base.forward(base.embed_rows(ids), iota_positions(ids.size()));
  const Tensor last = nn::slice_rows(seq.hidden, 4, 1).value();
  CHECK(testutil::max_abs_diff(last, full.last_hidden) < 1e-10);
  for (const auto& [layer, tap] : full.taps) {
    CHECK(testutil::max_abs_diff(nn::slice_rows(seq.taps.at(layer), 4, 1).value(), tap) < 1e-10);
  }

  const std::vector<std::int32_t> seven(7, 65);
  auto [o7, c7] = base.prefill(seven, 0);
  CHECK(c7.entries() == 7);
  for (std::size_t l = 0; l < c7.layers(); ++l) CHECK(c7.keys(l).rows() == 7);
  CHECK_THROWS_AS(base.prefill(std::span<const std::int32_t>(), 0), Error);
}

TEST_CASE("decode_step positions: gaps, ordering, capacity") {
  const HamburgerModel m(testutil::tiny_config(), 3);
  const BaseModel& base = m.base();
  const std::vector<std::int32_t> ids{1, 2, 3};
  auto [out, cache] = base.prefill(ids, 0);
  base.decode_step(base.embed(4), 5, cache);
  CHECK(cache.entries() == 4);
  base.decode_step(base.embed(5), 6, cache);
  CHECK(cache.entries() == 5);
  CHECK(cache.positions() == std::vector<std::int64_t>{0, 1, 2, 5, 6});
  try {
    base.decode_step(base.embed(5), 6, cache);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ordering);
  }
  CHECK(cache.entries() == 5);
  try {
    base.decode_step(base.embed(5), base.config().max_context, cache);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::capacity);
  }

  // Decoding with a gap equals a batch forward over the same positions.
  const std::vector<std::int64_t> pos{0, 1, 2, 5, 6};
  const std::vector<std::int32_t> all{1, 2, 3, 4, 5};
  const SequenceOutput seq = base.forward(base.embed_rows(all), pos);
  auto [o2, c2] = base.prefill(ids, 0);
  base.decode_step(base.embed(4), 5, c2);
  const StepOutput last = base.decode_step(base.embed(5), 6, c2);
  CHECK(testutil::max_abs_diff(nn::slice_rows(seq.hidden, 4, 1).value(), last.last_hidden) < 1e-10);
}

TEST_CASE("step output taps match the configured layers") {
  const HamburgerModel m(testutil::tiny_config(), 4);
  const std::vector<std::int32_t> ids{7, 8};
  auto [out, cache] = m.base().prefill(ids, 0);
  std::vector<int> keys;
  for (const auto& [k, v] : out.taps) keys.push_back(k);
  CHECK(keys == m.config().tap_layers);
}

TEST_CASE("lm_head examples") {
  const HamburgerModel m(testutil::tiny_config(), 5);
  const BaseModel& base = m.base();
  const Tensor zero = Tensor::matrix(1, 16);
  const Tensor zero_logits = base.lm_head(zero);
  for (double v : zero_logits.data()) CHECK(v == 0.0);

  const Tensor h = testutil::random_tensor(1, 16, 6);
  const Tensor logits = base.lm_head(h);
  const Tensor& w = m.parameters().at("base.lm_head").value();
  double worst = 0.0;
  for (std::size_t v = 0; v < 260; ++v) {
    double ref = 0.0;
    for (std::size_t c = 0; c < 16; ++c) ref += h[c] * w(c, v);
    worst = std::max(worst, std::abs(ref - logits[v]));
  }
  CHECK(worst < 1e-12);

  std::vector<double> scaled(logits.data().begin(), logits.data().end());
  for (double& v : scaled) v *= 3.5;
  CHECK(nn::argmax(scaled) == nn::argmax(logits.data()));
}

TEST_CASE("grad_check: base blocks") {
  ModelConfig c = testutil::tiny_config();
  const HamburgerModel m(c, 7);
  const std::vector<std::int32_t> ids{tokens::bos, 3, 9, 27, tokens::resp};
  const std::vector<std::int64_t> pos{0, 1, 2, 4, 7};
  const std::vector<std::int32_t> targets{3, 9, 27, 81, 5};
  const std::vector<std::uint8_t> mask(5, 1);
  auto loss = [&] {
    const SequenceOutput out = m.base().forward(m.base().embed_rows(ids), pos);
    return nn::cross_entropy(m.base().lm_head(out.hidden), targets, mask).loss;
  };
  const auto params = testutil::vars_with_prefix(m.parameters(), "base.");
  CHECK(nn::grad_check(loss, params, {.epsilon = 1e-5, .samples_per_param = 6, .seed = 1}) < 1e-4);
}

TEST_CASE("checkpoint round trip is byte exact") {
  const HamburgerModel m(testutil::tiny_config(), 8);
  const std::string bytes = serialize_checkpoint(m);
  const auto back = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(*back) == bytes);
  CHECK(back->config() == m.config());
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 5)), Error);
  CHECK_THROWS_AS(deserialize_checkpoint("not a checkpoint"), Error);

  const HamburgerModel other(testutil::tiny_config(), 9);
  CHECK(serialize_checkpoint(other) != bytes);
}
