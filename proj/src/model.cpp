#include "hamburger/model.hpp"

#include <algorithm>
#include <cmath>

#include "hamburger/error.hpp"

namespace hamburger {

using nn::Mask;
using nn::Var;

Tensor random_normal(std::vector<std::size_t> shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

KVCache::KVCache(std::size_t n_layers) : keys_(n_layers), values_(n_layers) {}

std::optional<std::int64_t> KVCache::last_position() const {
  if (positions_.empty()) return std::nullopt;
  return positions_.back();
}

TransformerBlock::TransformerBlock(nn::ParameterSet& params, const std::string& prefix,
                                   const ModelConfig& config, nn::ParamGroup group,
                                   std::mt19937_64& rng)
    : n_heads_(static_cast<std::size_t>(config.n_heads)), rope_base_(config.rope_base) {
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto f = static_cast<std::size_t>(config.ffn_dim());
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_std = in_std / std::sqrt(2.0 * config.n_layers);
  attn_norm_ = &params.add(prefix + ".attn_norm", Tensor::vector(d, 1.0), group);
  wq_ = &params.add(prefix + ".wq", random_normal({d, d}, in_std, rng), group);
  wk_ = &params.add(prefix + ".wk", random_normal({d, d}, in_std, rng), group);
  wv_ = &params.add(prefix + ".wv", random_normal({d, d}, in_std, rng), group);
  wo_ = &params.add(prefix + ".wo", random_normal({d, d}, out_std, rng), group);
  ffn_norm_ = &params.add(prefix + ".ffn_norm", Tensor::vector(d, 1.0), group);
  w_up_ = &params.add(prefix + ".w_up", random_normal({d, f}, in_std, rng), group);
  w_down_ = &params.add(prefix + ".w_down",
                        random_normal({f, d}, 1.0 / std::sqrt(static_cast<double>(f)) /
                                                  std::sqrt(2.0 * config.n_layers),
                                      rng),
                        group);
}

Var TransformerBlock::feed_forward(const Var& h) const {
  const Var normed = nn::rms_norm(h, ffn_norm_->var());
  return nn::matmul(nn::silu(nn::matmul(normed, w_up_->var())), w_down_->var());
}

Var TransformerBlock::forward(const Var& x, std::span<const std::int64_t> positions,
                              const Mask& mask) const {
  const Var h = nn::rms_norm(x, attn_norm_->var());
  const Var q = nn::rope(nn::matmul(h, wq_->var()), positions, n_heads_, rope_base_);
  const Var k = nn::rope(nn::matmul(h, wk_->var()), positions, n_heads_, rope_base_);
  const Var v = nn::matmul(h, wv_->var());
  const Var a = nn::attention(q, k, v, mask, n_heads_);
  const Var x1 = nn::add(x, nn::matmul(a, wo_->var()));
  return nn::add(x1, feed_forward(x1));
}

Var TransformerBlock::forward_cached(const Var& x, std::span<const std::int64_t> positions,
                                     Tensor& keys, Tensor& values, bool causal) const {
  const Var h = nn::rms_norm(x, attn_norm_->var());
  const Var q = nn::rope(nn::matmul(h, wq_->var()), positions, n_heads_, rope_base_);
  const Var k = nn::rope(nn::matmul(h, wk_->var()), positions, n_heads_, rope_base_);
  const Var v = nn::matmul(h, wv_->var());
  const std::size_t old = keys.empty() ? 0 : keys.rows();
  keys.append_rows(k.value());
  values.append_rows(v.value());
  const std::size_t n = x.rows();
  Mask mask(n, old + n, true);
  if (causal) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = old + r + 1; c < old + n; ++c) mask.set(r, c, false);
    }
  }
  const Var a = nn::attention(q, keys, values, mask, n_heads_);
  const Var x1 = nn::add(x, nn::matmul(a, wo_->var()));
  return nn::add(x1, feed_forward(x1));
}

void TransformerBlock::append_kv(const Var& x, std::span<const std::int64_t> positions, Tensor& keys,
                                 Tensor& values) const {
  const Var h = nn::rms_norm(x, attn_norm_->var());
  keys.append_rows(nn::rope(nn::matmul(h, wk_->var()), positions, n_heads_, rope_base_).value());
  values.append_rows(nn::matmul(h, wv_->var()).value());
}

BaseModel::BaseModel(nn::ParameterSet& params, const ModelConfig& config, std::mt19937_64& rng)
    : config_(config) {
  config_.validate();
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto vocab = static_cast<std::size_t>(config.vocab_size);
  embedding_ = &params.add("base.embed", random_normal({vocab, d}, 1.0, rng), nn::ParamGroup::base);
  blocks_.reserve(static_cast<std::size_t>(config.n_layers));
  for (int l = 0; l < config.n_layers; ++l) {
    blocks_.emplace_back(params, "base.layers." + std::to_string(l), config_, nn::ParamGroup::base,
                         rng);
  }
  final_norm_ = &params.add("base.final_norm", Tensor::vector(d, 1.0), nn::ParamGroup::base);
  head_ = &params.add("base.lm_head",
                      random_normal({d, vocab}, 1.0 / std::sqrt(static_cast<double>(d)), rng),
                      nn::ParamGroup::base);
}

Tensor BaseModel::embed(std::int32_t token_id) const {
  const std::int32_t ids[] = {token_id};
  nn::NoGradGuard guard;
  return embed_rows(ids).value();
}

Var BaseModel::embed_rows(std::span<const std::int32_t> ids) const {
  return nn::embedding(embedding_->var(), ids);
}

SequenceOutput BaseModel::forward(const Var& inputs, std::span<const std::int64_t> positions) const {
  const Mask mask = Mask::causal(inputs.rows());
  SequenceOutput out;
  Var x = inputs;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    x = blocks_[l].forward(x, positions, mask);
    const int layer = static_cast<int>(l) + 1;
    if (std::find(config_.tap_layers.begin(), config_.tap_layers.end(), layer) !=
        config_.tap_layers.end()) {
      out.taps.emplace(layer, x);
    }
  }
  out.hidden = nn::rms_norm(x, final_norm_->var());
  return out;
}

StepOutput BaseModel::forward_cached(const Var& inputs, std::span<const std::int64_t> positions,
                                     KVCache& cache) const {
  if (cache.layers() != blocks_.size()) {
    fail(ErrorKind::dimension, "cache has " + std::to_string(cache.layers()) + " layers, model has " +
                                   std::to_string(blocks_.size()));
  }
  std::int64_t prev = cache.last_position().value_or(-1);
  for (std::int64_t p : positions) {
    if (p <= prev) {
      fail(ErrorKind::ordering, "position " + std::to_string(p) +
                                    " does not follow last cached position " +
                                    std::to_string(prev));
    }
    if (p >= config_.max_context) {
      fail(ErrorKind::capacity, "position " + std::to_string(p) + " exceeds maximum context " +
                                    std::to_string(config_.max_context));
    }
    prev = p;
  }
  StepOutput out;
  const std::size_t last = inputs.rows() - 1;
  Var x = inputs;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    x = blocks_[l].forward_cached(x, positions, cache.keys_[l], cache.values_[l], true);
    const int layer = static_cast<int>(l) + 1;
    if (std::find(config_.tap_layers.begin(), config_.tap_layers.end(), layer) !=
        config_.tap_layers.end()) {
      out.taps.emplace(layer, nn::slice_rows(x, last, 1).value());
    }
  }
  cache.positions_.insert(cache.positions_.end(), positions.begin(), positions.end());
  const Var hidden = nn::rms_norm(nn::slice_rows(x, last, 1), final_norm_->var());
  out.last_hidden = hidden.value();
  out.logits = lm_head(hidden).value();
  return out;
}

std::pair<StepOutput, KVCache> BaseModel::prefill(std::span<const std::int32_t> token_ids,
                                                  std::int64_t start_position) const {
  if (token_ids.empty()) fail(ErrorKind::argument, "prefill: empty token sequence");
  if (start_position < 0) fail(ErrorKind::argument, "prefill: negative start position");
  nn::NoGradGuard guard;
  std::vector<std::int64_t> positions(token_ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    positions[i] = start_position + static_cast<std::int64_t>(i);
  }
  KVCache cache(blocks_.size());
  StepOutput out = forward_cached(embed_rows(token_ids), positions, cache);
  return {std::move(out), std::move(cache)};
}

StepOutput BaseModel::decode_step(const Tensor& input_embedding, std::int64_t position,
                                  KVCache& cache) const {
  if (input_embedding.size() != static_cast<std::size_t>(config_.d_model)) {
    fail(ErrorKind::dimension,
         "decode_step: embedding " + input_embedding.shape_string() + " is not d_model wide");
  }
  nn::NoGradGuard guard;
  const std::int64_t positions[] = {position};
  Tensor row({1, static_cast<std::size_t>(config_.d_model)},
             std::vector<double>(input_embedding.data().begin(), input_embedding.data().end()));
  return forward_cached(Var(std::move(row)), positions, cache);
}

Var BaseModel::lm_head(const Var& hidden) const { return nn::matmul(hidden, head_->var()); }

Tensor BaseModel::lm_head(const Tensor& hidden) const {
  nn::NoGradGuard guard;
  return nn::matmul(Var(hidden), head_->var()).value();
}

}  // namespace hamburger
