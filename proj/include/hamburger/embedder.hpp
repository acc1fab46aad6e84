#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "hamburger/autograd.hpp"
#include "hamburger/config.hpp"

namespace hamburger {

// Maps the 1..max_steps token embeddings emitted by the previous macro-step
// onto a single base-model input embedding. A single embedding passes
// through untouched.
class CompositionalEmbedder {
 public:
  CompositionalEmbedder(nn::ParameterSet& params, const ModelConfig& config,
                        std::mt19937_64& rng);

  // `token_embeddings` is [k x d_model]; returns [1 x d_model].
  nn::Var fuse(const nn::Var& token_embeddings) const;

  // Per-dimension softmax-weighted merge used as the ablation baseline.
  nn::Var softmax_merge_baseline(const nn::Var& token_embeddings) const;

  // Dispatches on the configured embedder kind.
  nn::Var merge(const nn::Var& token_embeddings) const;
  Tensor merge(const Tensor& token_embeddings) const;

  EmbedderKind kind() const noexcept { return kind_; }

 private:
  void check_count(std::size_t k) const;
  nn::Var cross_attention_fuse(const nn::Var& token_embeddings) const;

  EmbedderKind kind_;
  std::size_t max_steps_;
  std::size_t n_heads_;
  const nn::Parameter* intra_patch_pos_ = nullptr;
  const nn::Parameter* wq_ = nullptr;
  const nn::Parameter* wk_ = nullptr;
  const nn::Parameter* wv_ = nullptr;
  const nn::Parameter* wo_ = nullptr;
  const nn::Parameter* out_proj_ = nullptr;
  const nn::Parameter* out_bias_ = nullptr;
  const nn::Parameter* merge_logits_ = nullptr;
};

// Virtual position of a fused token: the absolute position of its last
// constituent, so the gap to the previous entry encodes the fused count.
std::int64_t assign_position(std::int64_t prev_last_position, std::int64_t fused_count);

}  // namespace hamburger
