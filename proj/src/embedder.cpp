#include "hamburger/embedder.hpp"

#include <cmath>

#include "hamburger/error.hpp"
#include "hamburger/model.hpp"
#include "hamburger/ops.hpp"

namespace hamburger {

using nn::Var;

CompositionalEmbedder::CompositionalEmbedder(nn::ParameterSet& params, const ModelConfig& config,
                                             std::mt19937_64& rng)
    : kind_(config.embedder),
      max_steps_(static_cast<std::size_t>(config.max_steps)),
      n_heads_(static_cast<std::size_t>(config.n_heads)) {
  const auto d = static_cast<std::size_t>(config.d_model);
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  constexpr auto grafted = nn::ParamGroup::grafted;
  if (kind_ == EmbedderKind::cross_attention) {
    intra_patch_pos_ =
        &params.add("embedder.intra_patch_pos", random_normal({max_steps_, d}, 0.2, rng), grafted);
    wq_ = &params.add("embedder.wq", random_normal({d, d}, in_std, rng), grafted);
    wk_ = &params.add("embedder.wk", random_normal({d, d}, in_std, rng), grafted);
    wv_ = &params.add("embedder.wv", random_normal({d, d}, in_std, rng), grafted);
    wo_ = &params.add("embedder.wo", random_normal({d, d}, in_std, rng), grafted);
    out_proj_ = &params.add("embedder.out_proj", random_normal({d, d}, in_std, rng), grafted);
    out_bias_ = &params.add("embedder.out_bias", Tensor::vector(d), grafted);
  } else {
    // Zero logits start the merge as a plain mean.
    merge_logits_ = &params.add("embedder.merge_logits", Tensor::matrix(max_steps_, d), grafted);
  }
}

void CompositionalEmbedder::check_count(std::size_t k) const {
  if (k == 0 || k > max_steps_) {
    fail(ErrorKind::argument, "embedder: " + std::to_string(k) + " tokens, expected 1.." +
                                  std::to_string(max_steps_));
  }
}

Var CompositionalEmbedder::fuse(const Var& token_embeddings) const {
  check_count(token_embeddings.rows());
  if (token_embeddings.rows() == 1) return token_embeddings;
  if (kind_ != EmbedderKind::cross_attention) {
    fail(ErrorKind::configuration, "embedder: cross-attention weights not configured");
  }
  return cross_attention_fuse(token_embeddings);
}

Var CompositionalEmbedder::cross_attention_fuse(const Var& token_embeddings) const {
  const std::size_t k = token_embeddings.rows();
  const Var augmented = nn::add(token_embeddings, nn::slice_rows(intra_patch_pos_->var(), 0, k));
  const Var query = nn::matmul(nn::mean_rows(augmented), wq_->var());
  const Var keys = nn::matmul(augmented, wk_->var());
  const Var values = nn::matmul(augmented, wv_->var());
  const Var pooled = nn::attention(query, keys, values, nn::Mask::full(1, k), n_heads_);
  const Var mixed = nn::matmul(pooled, wo_->var());
  return nn::add_bias(nn::matmul(mixed, out_proj_->var()), out_bias_->var());
}

Var CompositionalEmbedder::softmax_merge_baseline(const Var& token_embeddings) const {
  const std::size_t k = token_embeddings.rows();
  check_count(k);
  if (k == 1) return token_embeddings;
  if (kind_ != EmbedderKind::softmax_merge) {
    fail(ErrorKind::configuration, "embedder: softmax merge weights not configured");
  }
  const Var weights = nn::softmax_cols(nn::slice_rows(merge_logits_->var(), 0, k));
  return nn::sum_rows(nn::mul(weights, token_embeddings));
}

Var CompositionalEmbedder::merge(const Var& token_embeddings) const {
  return kind_ == EmbedderKind::cross_attention ? fuse(token_embeddings)
                                                : softmax_merge_baseline(token_embeddings);
}

Tensor CompositionalEmbedder::merge(const Tensor& token_embeddings) const {
  if (token_embeddings.rows() == 1) {
    check_count(1);
    return token_embeddings;
  }
  nn::NoGradGuard guard;
  return merge(Var(token_embeddings)).value();
}

std::int64_t assign_position(std::int64_t prev_last_position, std::int64_t fused_count) {
  if (fused_count < 1) fail(ErrorKind::argument, "assign_position: fused count must be >= 1");
  return prev_last_position + fused_count;
}

}  // namespace hamburger
