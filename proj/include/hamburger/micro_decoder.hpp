#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "hamburger/autograd.hpp"
#include "hamburger/config.hpp"
#include "hamburger/model.hpp"

namespace hamburger {

// One projected row per tap layer, ascending layer order.
struct DecoderContext {
  nn::Var rows;  // [|tap_layers| x d_model]
};

// One teacher-forced rollout for the batched training path.
struct Rollout {
  nn::Var context;  // [c x d_model]
  nn::Var prior;    // [j x d_model] embeddings of the micro tokens emitted so far
};

class MicroStepDecoder {
 public:
  MicroStepDecoder(nn::ParameterSet& params, const ModelConfig& config, std::mt19937_64& rng);

  DecoderContext build_context(const std::map<int, nn::Var>& taps) const;
  DecoderContext build_context(const std::map<int, Tensor>& taps) const;
  // Training path: project every row of each [T x d] tap once, then pick
  // the context for one macro position.
  std::vector<nn::Var> project_taps(const std::map<int, nn::Var>& taps) const;
  DecoderContext context_at(std::span<const nn::Var> projected, std::size_t row) const;

  // Runs the decoder over [context rows ; prior] and returns the final
  // position's normed hidden state [1 x d_model].
  nn::Var micro_decode(const DecoderContext& context, const nn::Var* prior) const;

  // Batched teacher forcing: one block-diagonal pass over all rollouts.
  // Returns normed hidden rows for every prior row of every rollout, in order.
  nn::Var decode_rollouts(std::span<const Rollout> rollouts) const;

  nn::Var stop_logits(const nn::Var& hidden) const;
  double stop_prob(const Tensor& hidden) const;

  std::size_t context_rows() const noexcept { return taps_.size(); }
  const std::vector<int>& tap_layers() const noexcept { return taps_; }
  std::size_t layers() const noexcept { return blocks_.size(); }

 private:
  friend class MicroSession;

  nn::Mask rollout_mask(std::size_t context, std::size_t prior) const;

  ModelConfig config_;
  std::vector<int> taps_;
  std::vector<const nn::Parameter*> ctx_weight_;
  std::vector<const nn::Parameter*> ctx_bias_;
  std::vector<TransformerBlock> blocks_;
  const nn::Parameter* final_norm_;
  const nn::Parameter* stop_weight_;
  const nn::Parameter* stop_bias_;
};

// Inference-time incremental execution of micro_decode within one
// macro-step: context rows are run through the decoder layers once and each
// call to `step` processes a single new micro token row.
class MicroSession {
 public:
  MicroSession(const MicroStepDecoder& decoder, const DecoderContext& context);

  // Appends one micro token embedding [1 x d_model] and returns the normed
  // hidden state at its position.
  Tensor step(const Tensor& embedding);
  std::size_t prior_length() const noexcept { return prior_; }

 private:
  const MicroStepDecoder* decoder_;
  KVCache cache_;
  std::size_t prior_ = 0;
};

// Stop-token ablation: stop iff the reserved stop id is the argmax.
bool stop_via_token_baseline(std::span<const double> logits);

}  // namespace hamburger
