#include "hamburger/micro_decoder.hpp"

#include <cmath>

#include "hamburger/error.hpp"
#include "hamburger/ops.hpp"
#include "hamburger/tokenizer.hpp"

namespace hamburger {

using nn::Mask;
using nn::Var;

MicroStepDecoder::MicroStepDecoder(nn::ParameterSet& params, const ModelConfig& config,
                                   std::mt19937_64& rng)
    : config_(config), taps_(config.tap_layers) {
  const auto d = static_cast<std::size_t>(config.d_model);
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  constexpr auto grafted = nn::ParamGroup::grafted;
  for (int layer : taps_) {
    const std::string prefix = "decoder.context." + std::to_string(layer);
    ctx_weight_.push_back(&params.add(prefix + ".weight", random_normal({d, d}, in_std, rng), grafted));
    ctx_bias_.push_back(&params.add(prefix + ".bias", Tensor::vector(d), grafted));
  }
  for (int l = 0; l < config.decoder_layers; ++l) {
    blocks_.emplace_back(params, "decoder.layers." + std::to_string(l), config, grafted, rng);
  }
  final_norm_ = &params.add("decoder.final_norm", Tensor::vector(d, 1.0), grafted);
  stop_weight_ = &params.add("stop_head.weight", random_normal({d, 1}, 0.01, rng), grafted);
  stop_bias_ = &params.add("stop_head.bias", Tensor::vector(1), grafted);
}

DecoderContext MicroStepDecoder::build_context(const std::map<int, Var>& taps) const {
  std::vector<Var> rows;
  rows.reserve(taps_.size());
  for (std::size_t i = 0; i < taps_.size(); ++i) {
    auto it = taps.find(taps_[i]);
    if (it == taps.end()) {
      fail(ErrorKind::configuration, "decoder context: missing tap for layer " +
                                         std::to_string(taps_[i]));
    }
    rows.push_back(nn::add_bias(nn::matmul(it->second, ctx_weight_[i]->var()), ctx_bias_[i]->var()));
  }
  if (taps.size() != taps_.size()) {
    fail(ErrorKind::configuration, "decoder context: unexpected tap layers supplied");
  }
  return {nn::concat_rows(rows)};
}

DecoderContext MicroStepDecoder::build_context(const std::map<int, Tensor>& taps) const {
  std::map<int, Var> vars;
  for (const auto& [layer, t] : taps) vars.emplace(layer, Var(t));
  return build_context(vars);
}

std::vector<Var> MicroStepDecoder::project_taps(const std::map<int, Var>& taps) const {
  std::vector<Var> out;
  for (std::size_t i = 0; i < taps_.size(); ++i) {
    auto it = taps.find(taps_[i]);
    if (it == taps.end()) {
      fail(ErrorKind::configuration, "decoder context: missing tap for layer " +
                                         std::to_string(taps_[i]));
    }
    out.push_back(nn::add_bias(nn::matmul(it->second, ctx_weight_[i]->var()), ctx_bias_[i]->var()));
  }
  return out;
}

DecoderContext MicroStepDecoder::context_at(std::span<const Var> projected, std::size_t row) const {
  std::vector<Var> rows;
  rows.reserve(projected.size());
  for (const Var& p : projected) rows.push_back(nn::slice_rows(p, row, 1));
  return {nn::concat_rows(rows)};
}

Mask MicroStepDecoder::rollout_mask(std::size_t context, std::size_t prior) const {
  const std::size_t n = context + prior;
  Mask mask(n, n, false);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t visible = r < context ? context : r + 1;
    for (std::size_t c = 0; c < visible; ++c) mask.set(r, c, true);
  }
  return mask;
}

Var MicroStepDecoder::micro_decode(const DecoderContext& context, const Var* prior) const {
  const std::size_t j = (prior && prior->defined()) ? prior->rows() : 0;
  if (j > static_cast<std::size_t>(config_.max_steps - 1)) {
    fail(ErrorKind::argument, "micro_decode: " + std::to_string(j) +
                                  " prior micro tokens exceeds max_steps - 1");
  }
  const std::size_t c = context.rows.rows();
  Var x = j > 0 ? nn::concat_rows(std::vector<Var>{context.rows, *prior}) : context.rows;
  std::vector<std::int64_t> positions(c + j);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int64_t>(i);
  const Mask mask = rollout_mask(c, j);
  for (const auto& block : blocks_) x = block.forward(x, positions, mask);
  return nn::rms_norm(nn::slice_rows(x, c + j - 1, 1), final_norm_->var());
}

Var MicroStepDecoder::decode_rollouts(std::span<const Rollout> rollouts) const {
  if (rollouts.empty()) fail(ErrorKind::argument, "decode_rollouts: no rollouts");
  std::vector<Var> parts;
  std::vector<std::int64_t> positions;
  std::size_t total = 0;
  for (const auto& r : rollouts) {
    const std::size_t c = r.context.rows();
    const std::size_t j = r.prior.rows();
    if (j == 0 || j > static_cast<std::size_t>(config_.max_steps - 1)) {
      fail(ErrorKind::argument, "decode_rollouts: rollout with " + std::to_string(j) + " prior rows");
    }
    parts.push_back(r.context);
    parts.push_back(r.prior);
    for (std::size_t i = 0; i < c + j; ++i) positions.push_back(static_cast<std::int64_t>(i));
    total += c + j;
  }
  Mask mask(total, total, false);
  std::size_t offset = 0;
  for (const auto& r : rollouts) {
    const std::size_t c = r.context.rows();
    const std::size_t j = r.prior.rows();
    const Mask local = rollout_mask(c, j);
    for (std::size_t a = 0; a < c + j; ++a) {
      for (std::size_t b = 0; b < c + j; ++b) mask.set(offset + a, offset + b, local(a, b));
    }
    offset += c + j;
  }
  Var x = nn::concat_rows(parts);
  for (const auto& block : blocks_) x = block.forward(x, positions, mask);
  x = nn::rms_norm(x, final_norm_->var());
  std::vector<Var> outputs;
  offset = 0;
  for (const auto& r : rollouts) {
    const std::size_t c = r.context.rows();
    const std::size_t j = r.prior.rows();
    outputs.push_back(nn::slice_rows(x, offset + c, j));
    offset += c + j;
  }
  return outputs.size() == 1 ? outputs.front() : nn::concat_rows(outputs);
}

Var MicroStepDecoder::stop_logits(const Var& hidden) const {
  return nn::add_bias(nn::matmul(hidden, stop_weight_->var()), stop_bias_->var());
}

double MicroStepDecoder::stop_prob(const Tensor& hidden) const {
  const auto w = stop_weight_->value().data();
  const auto h = hidden.data();
  if (h.size() != w.size()) {
    fail(ErrorKind::dimension, "stop_prob: hidden " + hidden.shape_string() + " is not d_model wide");
  }
  double z = stop_bias_->value()[0];
  for (std::size_t i = 0; i < h.size(); ++i) z += h[i] * w[i];
  return nn::sigmoid(z);
}

MicroSession::MicroSession(const MicroStepDecoder& decoder, const DecoderContext& context)
    : decoder_(&decoder), cache_(decoder.blocks_.size()) {
  nn::NoGradGuard guard;
  const std::size_t c = context.rows.rows();
  std::vector<std::int64_t> positions(c);
  for (std::size_t i = 0; i < c; ++i) positions[i] = static_cast<std::int64_t>(i);
  Var x(context.rows.value());
  // Context rows only feed later rows, so the last layer needs just their keys/values.
  const std::size_t last = decoder.blocks_.size() - 1;
  for (std::size_t l = 0; l < last; ++l) {
    x = decoder.blocks_[l].forward_cached(x, positions, cache_.keys_[l], cache_.values_[l], false);
  }
  decoder.blocks_[last].append_kv(x, positions, cache_.keys_[last], cache_.values_[last]);
  cache_.positions_ = positions;
}

Tensor MicroSession::step(const Tensor& embedding) {
  if (prior_ + 1 > static_cast<std::size_t>(decoder_->config_.max_steps - 1)) {
    fail(ErrorKind::argument, "micro session: more than max_steps - 1 micro tokens");
  }
  nn::NoGradGuard guard;
  const std::int64_t positions[] = {static_cast<std::int64_t>(cache_.entries())};
  Var x(embedding);
  for (std::size_t l = 0; l < decoder_->blocks_.size(); ++l) {
    x = decoder_->blocks_[l].forward_cached(x, positions, cache_.keys_[l], cache_.values_[l], true);
  }
  cache_.positions_.push_back(positions[0]);
  ++prior_;
  return nn::rms_norm(x, decoder_->final_norm_->var()).value();
}

bool stop_via_token_baseline(std::span<const double> logits) {
  if (logits.size() <= static_cast<std::size_t>(tokens::stop)) return false;
  return nn::argmax(logits) == static_cast<std::size_t>(tokens::stop);
}

}  // namespace hamburger
