#include "hamburger/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hamburger/error.hpp"
#include "hamburger/inference.hpp"

namespace hamburger {

double hamburger_speedup(double n, double base_cost, double micro_cost) {
  if (!(n >= 1.0)) fail(ErrorKind::domain, "hamburger_speedup: n must be >= 1");
  if (!(micro_cost > 0.0)) fail(ErrorKind::domain, "hamburger_speedup: c must be > 0");
  if (!(micro_cost < base_cost)) {
    fail(ErrorKind::domain, "hamburger_speedup: requires c < C (c=" + std::to_string(micro_cost) +
                                ", C=" + std::to_string(base_cost) + ")");
  }
  return n * base_cost / (base_cost + (n - 1.0) * micro_cost);
}

double specdec_speedup(double alpha, double depth, double latency_ratio) {
  if (!(alpha >= 0.0 && alpha < 1.0)) fail(ErrorKind::domain, "specdec_speedup: alpha must lie in [0, 1)");
  if (!(depth >= 1.0)) fail(ErrorKind::domain, "specdec_speedup: depth must be >= 1");
  if (!(latency_ratio >= 0.0)) fail(ErrorKind::domain, "specdec_speedup: latency ratio must be >= 0");
  return (1.0 - std::pow(alpha, depth + 1.0)) / ((1.0 - alpha) * (depth * latency_ratio + 1.0));
}

double flops_block_row(const ModelConfig& config, std::size_t keys) {
  const auto d = static_cast<double>(config.d_model);
  const auto f = static_cast<double>(config.ffn_dim());
  return 2.0 * (4.0 * d * d + 2.0 * d * f + 2.0 * static_cast<double>(keys) * d);
}

namespace {

double head_flops(const ModelConfig& config) {
  return 2.0 * static_cast<double>(config.d_model) * static_cast<double>(config.vocab_size);
}

double stop_head_flops(const ModelConfig& config) {
  return 2.0 * static_cast<double>(config.d_model);
}

}  // namespace

double flops_base_step(const ModelConfig& config, std::size_t context_length) {
  if (context_length == 0) fail(ErrorKind::argument, "flops_base_step: context length must be >= 1");
  return static_cast<double>(config.n_layers) * flops_block_row(config, context_length) +
         head_flops(config);
}

double flops_prefill(const ModelConfig& config, std::size_t prompt_length) {
  if (prompt_length == 0) fail(ErrorKind::argument, "flops_prefill: empty prompt");
  double total = head_flops(config);
  for (std::size_t i = 1; i <= prompt_length; ++i) {
    total += static_cast<double>(config.n_layers) * flops_block_row(config, i);
  }
  return total;
}

double flops_context(const ModelConfig& config) {
  const auto d = static_cast<double>(config.d_model);
  const std::size_t rows = config.tap_layers.size();
  // The last decoder layer only computes keys and values for context rows.
  return static_cast<double>(rows) * (2.0 * d * d + 4.0 * d * d) +
         static_cast<double>(config.decoder_layers - 1) * static_cast<double>(rows) *
             flops_block_row(config, rows);
}

double flops_micro_invocation(const ModelConfig& config, std::size_t prior_length) {
  if (prior_length == 0) fail(ErrorKind::argument, "flops_micro_invocation: prior length must be >= 1");
  const std::size_t keys = config.tap_layers.size() + prior_length;
  return static_cast<double>(config.decoder_layers) * flops_block_row(config, keys) +
         head_flops(config) + stop_head_flops(config);
}

double flops_micro_step(const ModelConfig& config, std::size_t /*context_length*/) {
  const auto prior = static_cast<std::size_t>(std::max(config.max_steps - 1, 1));
  return flops_context(config) + flops_micro_invocation(config, prior);
}

double flops_fuse(const ModelConfig& config, std::size_t fused_count) {
  if (fused_count <= 1) return 0.0;
  const auto d = static_cast<double>(config.d_model);
  const auto k = static_cast<double>(fused_count);
  if (config.embedder == EmbedderKind::softmax_merge) return 2.0 * k * d;
  // q, wo and out_proj on one row; k and v on every row; scores and mix.
  return 2.0 * (3.0 * d * d + 2.0 * k * d * d + 2.0 * k * d);
}

namespace {

struct TraceFlops {
  double decode_base = 0.0;
  std::size_t decode_steps = 0;
  double grafted = 0.0;
};

TraceFlops tally(const GenerationTrace& trace) {
  TraceFlops t;
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    const auto& s = trace.steps[k];
    if (k > 0) {
      t.decode_base += s.flops_base;
      ++t.decode_steps;
    }
    t.grafted += s.flops_micro + s.flops_fuse;
  }
  return t;
}

}  // namespace

ReconcileReport reconcile(const GenerationTrace& trace, const GenerationTrace& baseline) {
  if (trace.steps.empty()) fail(ErrorKind::argument, "reconcile: empty trace");
  if (baseline.steps.empty()) fail(ErrorKind::argument, "reconcile: missing baseline trace");
  const TraceFlops run = tally(trace);
  const TraceFlops base = tally(baseline);
  if (run.decode_steps == 0 || base.decode_steps == 0) {
    fail(ErrorKind::argument, "reconcile: traces need at least one decode step");
  }
  ReconcileReport r;
  r.mean_tokens_per_step = compression_rate(trace);
  r.base_cost = run.decode_base / static_cast<double>(run.decode_steps);
  const std::size_t calls = trace.decoder_calls();
  r.micro_cost = calls == 0 ? 0.0 : run.grafted / static_cast<double>(calls);
  const double n = r.mean_tokens_per_step;
  if (calls == 0 || n <= 1.0) {
    r.predicted_speedup = 1.0;
  } else if (r.micro_cost < r.base_cost) {
    r.predicted_speedup = hamburger_speedup(n, r.base_cost, r.micro_cost);
  } else {
    // Outside the formula's side condition; report the slowdown it implies.
    r.predicted_speedup = n * r.base_cost / (r.base_cost + (n - 1.0) * r.micro_cost);
  }
  // FLOPs per emitted token, excluding the prefill forward.
  const double base_per_token =
      (base.decode_base + base.grafted) / static_cast<double>(baseline.total_tokens());
  const double run_per_token = (run.decode_base + run.grafted) / static_cast<double>(trace.total_tokens());
  r.measured_flops_ratio = base_per_token / run_per_token;
  r.relative_gap = (r.predicted_speedup - r.measured_flops_ratio) / r.measured_flops_ratio;
  return r;
}

}  // namespace hamburger
