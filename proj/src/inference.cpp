#include "hamburger/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>

#include "hamburger/cost_model.hpp"
#include "hamburger/error.hpp"
#include "hamburger/ops.hpp"
#include "hamburger/tokenizer.hpp"
#include "json.hpp"

namespace hamburger {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::int32_t greedy(const Tensor& logits) {
  return static_cast<std::int32_t>(nn::argmax(logits.data()));
}

double softmax_prob(const Tensor& logits, std::size_t id) {
  const auto z = logits.data();
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double total = 0.0;
  for (double v : z) total += std::exp(v - mx);
  return std::exp(z[id] - mx) / total;
}

}  // namespace

void GenerationConfig::validate() const {
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    fail(ErrorKind::configuration, "generation field 'confidence': must lie in [0, 1]");
  }
  if (max_new_tokens == 0) fail(ErrorKind::configuration, "generation field 'max_new_tokens': must be >= 1");
}

std::size_t GenerationTrace::total_tokens() const {
  std::size_t n = 0;
  for (const auto& s : steps) n += s.tokens.size();
  return n;
}

std::size_t GenerationTrace::decoder_calls() const {
  std::size_t n = 0;
  for (const auto& s : steps) n += s.decoder_calls;
  return n;
}

GenerationResult generate(const HamburgerModel& model, std::span<const std::int32_t> prompt_ids,
                          const GenerationConfig& config) {
  config.validate();
  if (prompt_ids.empty()) fail(ErrorKind::argument, "generate: empty prompt");
  const ModelConfig& cfg = model.config();
  const BaseModel& base = model.base();
  const MicroStepDecoder& decoder = model.decoder();
  const auto max_steps = static_cast<std::size_t>(cfg.max_steps);
  const bool token_stop = cfg.stop_mode == StopMode::token;
  // Sigmoid can round to exactly 0, so theta = 1 is special-cased.
  const bool micro_enabled = config.confidence < 1.0 && max_steps > 1;
  auto go_on = [&](double p) { return micro_enabled && p < 0.5 && 1.0 - p >= config.confidence; };

  GenerationResult result;
  GenerationTrace& trace = result.trace;
  trace.prompt_tokens = prompt_ids.size();

  auto t0 = Clock::now();
  auto prefilled = base.prefill(prompt_ids, 0);
  StepOutput out = std::move(prefilled.first);
  KVCache cache = std::move(prefilled.second);
  double base_seconds = seconds_since(t0);
  double base_flops = flops_prefill(cfg, prompt_ids.size());

  std::size_t emitted = 0;
  bool done = false;
  while (!done) {
    MacroStepRecord rec;
    rec.kv_entries = cache.entries();
    rec.flops_base = base_flops;
    rec.base_seconds = base_seconds;

    auto emit = [&](std::int32_t t) {
      rec.tokens.push_back(t);
      result.tokens.push_back(t);
      ++emitted;
      if (emitted >= config.max_new_tokens || (t == tokens::eos && !config.ignore_eos)) done = true;
    };

    emit(greedy(*out.logits));
    if (!done && micro_enabled) {
      std::optional<MicroSession> session;
      auto decoder_call = [&](std::int32_t prev) {
        if (!session) {
          session.emplace(decoder, decoder.build_context(out.taps));
          rec.flops_micro += flops_context(cfg);
        }
        const auto t1 = Clock::now();
        const Tensor h = session->step(base.embed(prev));
        Tensor logits = base.lm_head(h);
        const double p = token_stop ? softmax_prob(logits, tokens::stop) : decoder.stop_prob(h);
        rec.decoder_seconds.push_back(seconds_since(t1));
        ++rec.decoder_calls;
        rec.flops_micro += flops_micro_invocation(cfg, session->prior_length());
        return std::pair{std::move(logits), p};
      };

      if (token_stop) {
        while (!done && rec.tokens.size() < max_steps) {
          auto [logits, p] = decoder_call(rec.tokens.back());
          rec.stop_probs.push_back(p);
          const std::int32_t t = greedy(logits);
          if (t == tokens::stop || !go_on(p)) break;
          emit(t);
        }
      } else {
        double p = decoder.stop_prob(out.last_hidden);
        rec.flops_micro += 2.0 * static_cast<double>(cfg.d_model);
        rec.stop_probs.push_back(p);
        while (!done && rec.tokens.size() < max_steps && go_on(p)) {
          auto [logits, next_p] = decoder_call(rec.tokens.back());
          emit(greedy(logits));
          p = next_p;
          if (!done && rec.tokens.size() < max_steps) rec.stop_probs.push_back(p);
        }
      }
    }

    if (!done) {
      Tensor rows;
      for (std::int32_t t : rec.tokens) rows.append_rows(base.embed(t));
      const Tensor fused = model.embedder().merge(rows);
      rec.flops_fuse = flops_fuse(cfg, rec.tokens.size());
      const std::int64_t pos = assign_position(*cache.last_position(), static_cast<std::int64_t>(rec.tokens.size()));
      t0 = Clock::now();
      out = base.decode_step(fused, pos, cache);
      base_seconds = seconds_since(t0);
      base_flops = flops_base_step(cfg, cache.entries());
    }
    trace.steps.push_back(std::move(rec));
  }
  result.cache_entries = cache.entries();
  return result;
}

std::vector<std::int32_t> base_greedy(const BaseModel& model, std::span<const std::int32_t> prompt_ids,
                                      std::size_t max_new_tokens, bool ignore_eos) {
  if (prompt_ids.empty()) fail(ErrorKind::argument, "base_greedy: empty prompt");
  std::vector<std::int32_t> out_tokens;
  auto [out, cache] = model.prefill(prompt_ids, 0);
  while (out_tokens.size() < max_new_tokens) {
    const std::int32_t t = greedy(*out.logits);
    out_tokens.push_back(t);
    if ((t == tokens::eos && !ignore_eos) || out_tokens.size() >= max_new_tokens) break;
    out = model.decode_step(model.embed(t), *cache.last_position() + 1, cache);
  }
  return out_tokens;
}

double compression_rate(const GenerationTrace& trace) {
  const std::size_t t = trace.total_tokens();
  if (t == 0) fail(ErrorKind::argument, "compression_rate: empty trace");
  return static_cast<double>(t) / static_cast<double>(trace.macro_steps());
}

std::string response_text(std::span<const std::int32_t> ids) {
  std::vector<std::int32_t> head;
  for (std::int32_t t : ids) {
    if (t == tokens::eos) break;
    head.push_back(t);
  }
  return decode(head);
}

std::vector<SweepRow> sweep_confidence(const HamburgerModel& model, std::span<const EvalPrompt> prompts,
                                       std::span<const double> confidences,
                                       std::size_t max_new_tokens) {
  if (prompts.empty()) fail(ErrorKind::argument, "sweep_confidence: no prompts");
  for (std::size_t i = 1; i < confidences.size(); ++i) {
    if (confidences[i] < confidences[i - 1]) {
      fail(ErrorKind::argument, "sweep_confidence: confidence list must be sorted ascending");
    }
  }
  std::vector<SweepRow> rows;
  for (double theta : confidences) {
    GenerationConfig gc;
    gc.confidence = theta;
    gc.max_new_tokens = max_new_tokens;
    SweepRow row;
    row.confidence = theta;
    std::size_t exact = 0;
    for (const auto& p : prompts) {
      const auto r = generate(model, p.prompt_ids, gc);
      row.tokens += r.trace.total_tokens();
      row.macro_steps += r.trace.macro_steps();
      if (response_text(r.tokens) == p.reference) ++exact;
    }
    row.compression = static_cast<double>(row.tokens) / static_cast<double>(row.macro_steps);
    row.exact_match = static_cast<double>(exact) / static_cast<double>(prompts.size());
    rows.push_back(row);
  }
  return rows;
}

std::string trace_to_jsonl(const GenerationTrace& trace) {
  std::string out;
  for (const auto& s : trace.steps) {
    nlohmann::ordered_json j;
    j["tokens"] = s.tokens;
    j["stop_probs"] = s.stop_probs;
    j["kv_entries"] = s.kv_entries;
    j["flops_base"] = s.flops_base;
    j["flops_micro"] = s.flops_micro;
    j["flops_fuse"] = s.flops_fuse;
    j["decoder_calls"] = s.decoder_calls;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_trace(const GenerationTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write '" + path + "'");
  out << trace_to_jsonl(trace);
}

std::vector<BenchRow> bench_throughput(const HamburgerModel& model,
                                       std::span<const std::vector<std::int32_t>> prompts,
                                       std::span<const double> confidences,
                                       std::size_t max_new_tokens, std::size_t repetitions,
                                       bool ignore_eos) {
  if (prompts.empty() || confidences.empty() || repetitions == 0) {
    fail(ErrorKind::argument, "bench_throughput: empty workload");
  }
  std::vector<BenchRow> rows(confidences.size());
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    for (std::size_t i = 0; i < confidences.size(); ++i) {
      GenerationConfig gc;
      gc.confidence = confidences[i];
      gc.max_new_tokens = max_new_tokens;
      gc.ignore_eos = ignore_eos;
      double seconds = 0.0;
      std::size_t tokens = 0;
      std::size_t steps = 0;
      for (const auto& prompt : prompts) {
        const auto t0 = Clock::now();
        const GenerationResult r = generate(model, prompt, gc);
        seconds += seconds_since(t0) - r.trace.steps.front().base_seconds;
        tokens += r.trace.total_tokens();
        steps += r.trace.macro_steps();
      }
      BenchRow& row = rows[i];
      if (rep == 0 || seconds < row.seconds) {
        row = {confidences[i], tokens, steps, seconds, 0.0};
      }
    }
  }
  for (auto& row : rows) {
    row.tokens_per_second = static_cast<double>(row.tokens) / std::max(row.seconds, 1e-12);
  }
  return rows;
}

}  // namespace hamburger
