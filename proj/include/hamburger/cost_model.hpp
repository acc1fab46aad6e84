#pragma once

#include <cstddef>

#include "hamburger/config.hpp"

namespace hamburger {

struct GenerationTrace;

// Per-macro-step speedup of token fusion: n C / (C + (n - 1) c), for c < C.
double hamburger_speedup(double n, double base_cost, double micro_cost);

// Expected speedup of draft-and-verify speculative decoding with drafting
// depth `depth`, acceptance rate alpha and draft/base latency ratio.
double specdec_speedup(double alpha, double depth, double latency_ratio);

// Analytic FLOPs, 2 per multiply-accumulate. Attention terms scale with the
// number of keys a row attends to; norms and activations are not counted.
double flops_block_row(const ModelConfig& config, std::size_t keys);
// One base forward of a single embedding against a cache of S entries
// (including the new one), plus the language head.
double flops_base_step(const ModelConfig& config, std::size_t context_length);
double flops_prefill(const ModelConfig& config, std::size_t prompt_length);
// Worst-case micro-step decoder invocation. Takes S only so callers can
// verify it has no effect.
double flops_micro_step(const ModelConfig& config, std::size_t context_length);
// Incremental invocation that adds the `prior_length`-th micro token row.
double flops_micro_invocation(const ModelConfig& config, std::size_t prior_length);
// Tap projections plus decoder layers over the context rows, once per macro-step
// (the last layer only projects their keys and values).
double flops_context(const ModelConfig& config);
double flops_fuse(const ModelConfig& config, std::size_t fused_count);

struct ReconcileReport {
  double mean_tokens_per_step = 1.0;  // effective n
  double base_cost = 0.0;             // mean FLOPs of one base decode step (C)
  double micro_cost = 0.0;            // grafted FLOPs per decoder invocation (c)
  double predicted_speedup = 1.0;
  double measured_flops_ratio = 1.0;  // baseline FLOPs/token over run FLOPs/token
  double relative_gap = 0.0;          // (predicted - measured) / measured
};

ReconcileReport reconcile(const GenerationTrace& trace, const GenerationTrace& baseline);

}  // namespace hamburger
