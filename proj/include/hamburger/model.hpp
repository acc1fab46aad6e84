#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hamburger/autograd.hpp"
#include "hamburger/config.hpp"
#include "hamburger/ops.hpp"

namespace hamburger {

// Append-only per-layer key/value store. Keys are stored after rotation.
class KVCache {
 public:
  KVCache() = default;
  explicit KVCache(std::size_t n_layers);

  std::size_t layers() const noexcept { return keys_.size(); }
  std::size_t entries() const noexcept { return positions_.size(); }
  const std::vector<std::int64_t>& positions() const noexcept { return positions_; }
  std::optional<std::int64_t> last_position() const;
  const Tensor& keys(std::size_t layer) const { return keys_.at(layer); }
  const Tensor& values(std::size_t layer) const { return values_.at(layer); }

 private:
  friend class BaseModel;
  friend class MicroSession;

  std::vector<Tensor> keys_;
  std::vector<Tensor> values_;
  std::vector<std::int64_t> positions_;
};

// Result of a base-model forward at one sequence position.
struct StepOutput {
  Tensor last_hidden;             // [1 x d_model], after the final norm
  std::map<int, Tensor> taps;     // layer index -> [1 x d_model] block output
  std::optional<Tensor> logits;   // [1 x vocab]
};

// Differentiable per-row outputs of a base-model forward.
struct SequenceOutput {
  nn::Var hidden;               // [T x d_model], after the final norm
  std::map<int, nn::Var> taps;  // layer index -> [T x d_model]
};

// Pre-norm attention + SiLU feed-forward block with rotary positions.
class TransformerBlock {
 public:
  TransformerBlock(nn::ParameterSet& params, const std::string& prefix, const ModelConfig& config,
                   nn::ParamGroup group, std::mt19937_64& rng);

  // Full-sequence forward without cache; `mask` defines visibility.
  nn::Var forward(const nn::Var& x, std::span<const std::int64_t> positions,
                  const nn::Mask& mask) const;

  // Appends the rows' keys/values to (keys, values), then lets every new row
  // attend to all previously stored rows and to the new rows (causally, or
  // all of them when `causal` is false).
  nn::Var forward_cached(const nn::Var& x, std::span<const std::int64_t> positions,
                         Tensor& keys, Tensor& values, bool causal) const;

  // Only appends the rows' keys/values; for rows whose outputs are unused.
  void append_kv(const nn::Var& x, std::span<const std::int64_t> positions, Tensor& keys,
                 Tensor& values) const;

 private:
  nn::Var feed_forward(const nn::Var& h) const;

  std::size_t n_heads_;
  double rope_base_;
  const nn::Parameter* attn_norm_;
  const nn::Parameter* wq_;
  const nn::Parameter* wk_;
  const nn::Parameter* wv_;
  const nn::Parameter* wo_;
  const nn::Parameter* ffn_norm_;
  const nn::Parameter* w_up_;
  const nn::Parameter* w_down_;
};

// Decoder-only transformer: embedding table, blocks, final norm, untied head.
class BaseModel {
 public:
  BaseModel(nn::ParameterSet& params, const ModelConfig& config, std::mt19937_64& rng);

  const ModelConfig& config() const noexcept { return config_; }

  Tensor embed(std::int32_t token_id) const;
  nn::Var embed_rows(std::span<const std::int32_t> ids) const;

  // Training path: causal self-attention over `inputs` with explicit positions.
  SequenceOutput forward(const nn::Var& inputs, std::span<const std::int64_t> positions) const;

  std::pair<StepOutput, KVCache> prefill(std::span<const std::int32_t> token_ids,
                                         std::int64_t start_position) const;
  // Consumes one (possibly fused) embedding and appends exactly one cache entry.
  StepOutput decode_step(const Tensor& input_embedding, std::int64_t position,
                         KVCache& cache) const;

  nn::Var lm_head(const nn::Var& hidden) const;
  Tensor lm_head(const Tensor& hidden) const;

  const nn::Parameter& embedding_table() const noexcept { return *embedding_; }

 private:
  StepOutput forward_cached(const nn::Var& inputs, std::span<const std::int64_t> positions,
                            KVCache& cache) const;

  ModelConfig config_;
  const nn::Parameter* embedding_;
  std::vector<TransformerBlock> blocks_;
  const nn::Parameter* final_norm_;
  const nn::Parameter* head_;
};

// Gaussian initializer used across components.
Tensor random_normal(std::vector<std::size_t> shape, double stddev, std::mt19937_64& rng);

}  // namespace hamburger
