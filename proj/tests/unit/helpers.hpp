#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hamburger/autograd.hpp"
#include "hamburger/config.hpp"
#include "hamburger/tensor.hpp"

namespace testutil {

inline hamburger::ModelConfig tiny_config() {
  hamburger::ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.decoder_layers = 1;
  c.tap_layers = {1, 2};
  c.max_steps = 4;
  c.ffn_mult = 2;
  c.max_context = 256;
  return c;
}

inline hamburger::Tensor random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed,
                                       double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  hamburger::Tensor t = hamburger::Tensor::matrix(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

inline std::vector<hamburger::nn::Var> vars_with_prefix(const hamburger::nn::ParameterSet& params,
                                                        const std::string& prefix) {
  std::vector<hamburger::nn::Var> out;
  for (const auto& p : params.items()) {
    if (p->name().rfind(prefix, 0) == 0) out.push_back(p->var());
  }
  return out;
}

inline double max_abs_diff(const hamburger::Tensor& a, const hamburger::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
