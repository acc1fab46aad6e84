#include "doctest.h"
#include "hamburger/error.hpp"
#include "hamburger/hamburger_model.hpp"
#include "hamburger/ops.hpp"
#include "hamburger/tokenizer.hpp"
#include "helpers.hpp"

using namespace hamburger;
using nn::Var;

namespace {

std::map<int, Var> taps_of(const HamburgerModel& m, std::span<const std::int32_t> ids) {
  std::vector<std::int64_t> pos(ids.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<std::int64_t>(i);
  return m.base().forward(m.base().embed_rows(ids), pos).taps;
}

}  // namespace

TEST_CASE("decoder context has one row per tap layer") {
  const HamburgerModel m(testutil::tiny_config(), 1);
  const std::vector<std::int32_t> ids{tokens::bos, 5, 6};
  auto [out, cache] = m.base().prefill(ids, 0);
  const DecoderContext ctx = m.decoder().build_context(out.taps);
  CHECK(ctx.rows.rows() == m.config().tap_layers.size());
  CHECK(ctx.rows.cols() == 16);
  std::map<int, Tensor> missing = out.taps;
  missing.erase(1);
  CHECK_THROWS_AS(m.decoder().build_context(missing), Error);
}

TEST_CASE("micro session matches full micro_decode") {
  const HamburgerModel m(testutil::tiny_config(), 2);
  const std::vector<std::int32_t> ids{tokens::bos, 5, 6, 7};
  auto [out, cache] = m.base().prefill(ids, 0);
  const DecoderContext ctx = m.decoder().build_context(out.taps);
  MicroSession session(m.decoder(), ctx);
  const std::vector<std::int32_t> micro{11, 12, 13};
  Tensor prior;
  for (std::size_t j = 0; j < micro.size(); ++j) {
    const Tensor e = m.base().embed(micro[j]);
    prior.append_rows(e);
    const Tensor inc = session.step(e);
    const Var p(prior);
    const Tensor full = m.decoder().micro_decode(ctx, &p).value();
    CHECK(testutil::max_abs_diff(inc, full) < 1e-10);
  }
  CHECK(session.prior_length() == 3);
  CHECK_THROWS_AS(session.step(m.base().embed(1)), Error);
}

TEST_CASE("batched rollouts match separate micro_decode calls") {
  const HamburgerModel m(testutil::tiny_config(), 3);
  const std::vector<std::int32_t> ids{tokens::bos, 5, 6, 7, 8};
  const auto taps = taps_of(m, ids);
  const auto projected = m.decoder().project_taps(taps);
  std::vector<Rollout> rollouts;
  std::vector<Tensor> expected;
  for (std::size_t row : {1u, 3u, 4u}) {
    Rollout r;
    r.context = m.decoder().context_at(projected, row).rows;
    r.prior = Var(testutil::random_tensor(row == 3 ? 1 : 3, 16, row));
    const Var full_prior = r.prior;
    const DecoderContext ctx{r.context};
    // Every prior prefix yields one output row.
    for (std::size_t j = 1; j <= full_prior.rows(); ++j) {
      const Var prefix = nn::slice_rows(full_prior, 0, j);
      expected.push_back(m.decoder().micro_decode(ctx, &prefix).value());
    }
    rollouts.push_back(r);
  }
  const Tensor batched = m.decoder().decode_rollouts(rollouts).value();
  REQUIRE(batched.rows() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    for (std::size_t c = 0; c < 16; ++c) CHECK(std::abs(batched(i, c) - expected[i][c]) < 1e-10);
  }
  Rollout too_long{rollouts[0].context, Var(testutil::random_tensor(4, 16, 9))};
  CHECK_THROWS_AS(m.decoder().decode_rollouts(std::span<const Rollout>(&too_long, 1)), Error);
}

TEST_CASE("stop probability agrees with the differentiable head") {
  const HamburgerModel m(testutil::tiny_config(), 4);
  const Tensor h = testutil::random_tensor(1, 16, 5);
  const double z = m.decoder().stop_logits(Var(h)).value()[0];
  CHECK(m.decoder().stop_prob(h) == doctest::Approx(nn::sigmoid(z)).epsilon(1e-14));
}

TEST_CASE("stop-token baseline") {
  std::vector<double> logits(260, 0.0);
  logits[tokens::stop] = 1.0;
  CHECK(stop_via_token_baseline(logits));
  logits[3] = 2.0;
  CHECK_FALSE(stop_via_token_baseline(logits));
}

TEST_CASE("micro session cost does not depend on base context length") {
  const HamburgerModel m(testutil::tiny_config(), 6);
  for (std::size_t n : {3u, 60u}) {
    const std::vector<std::int32_t> ids(n, 9);
    auto [out, cache] = m.base().prefill(ids, 0);
    const DecoderContext ctx = m.decoder().build_context(out.taps);
    CHECK(ctx.rows.rows() == 2);
  }
}

TEST_CASE("grad_check: micro-step decoder with stop head") {
  const HamburgerModel m(testutil::tiny_config(), 7);
  const std::vector<std::int32_t> ids{tokens::bos, 5, 6};
  Var prior(testutil::random_tensor(2, 16, 8), true);
  const std::int32_t targets[] = {3, 4, 5};
  const std::uint8_t stops[] = {0, 0, 1};
  const std::uint8_t on[] = {1, 1, 1};
  auto loss = [&] {
    const auto projected = m.decoder().project_taps(taps_of(m, ids));
    std::vector<Rollout> rs{{m.decoder().context_at(projected, 2).rows, prior},
                            {m.decoder().context_at(projected, 1).rows, nn::slice_rows(prior, 0, 1)}};
    const Var h = m.decoder().decode_rollouts(rs);
    return nn::add(nn::cross_entropy(m.base().lm_head(h), targets, on).loss,
                   nn::binary_cross_entropy(m.decoder().stop_logits(h), stops, on).loss);
  };
  auto params = testutil::vars_with_prefix(m.parameters(), "decoder.");
  for (const auto& v : testutil::vars_with_prefix(m.parameters(), "stop_head.")) params.push_back(v);
  params.push_back(prior);
  CHECK(nn::grad_check(loss, params, {.epsilon = 1e-5, .samples_per_param = 6, .seed = 3}) < 1e-4);
}
