#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hamburger/autograd.hpp"

namespace hamburger::nn {

// Boolean visibility matrix (query rows x key columns) for attention.
class Mask {
 public:
  Mask() = default;
  Mask(std::size_t rows, std::size_t cols, bool fill);

  static Mask full(std::size_t rows, std::size_t cols) { return {rows, cols, true}; }
  // Lower-triangular; a query row sees keys 0..row.
  static Mask causal(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool operator()(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { bits_[r * cols_ + c] = v ? 1 : 0; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var add_bias(const Var& x, const Var& bias);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var silu(const Var& x);
Var rms_norm(const Var& x, const Var& gain, double eps = 1e-6);

// Rotates each head's (i, i + head_dim/2) pairs by position * base^(-2i/head_dim).
Var rope(const Var& x, std::span<const std::int64_t> positions, std::size_t n_heads,
         double base = 10000.0);

// Multi-head scaled dot-product attention. Every query row must see at least
// one key; an all-false row raises a dimension error.
Var attention(const Var& queries, const Var& keys, const Var& values, const Mask& mask,
              std::size_t n_heads);
// Same, with keys and values held as constants (no gradient flows into them).
Var attention(const Var& queries, const Tensor& keys, const Tensor& values, const Mask& mask,
              std::size_t n_heads);

Var embedding(const Var& table, std::span<const std::int32_t> ids);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& x, std::size_t start, std::size_t count);
Var mean_rows(const Var& x);
Var sum_rows(const Var& x);
// Normalizes each column to a probability distribution over rows.
Var softmax_cols(const Var& x);
Var sum_all(const Var& x);

enum class Reduction { mean, sum };

struct LossValue {
  Var loss;                // shape {1}
  std::size_t count = 0;   // masked-in rows
  bool empty_mask = false; // every row masked out; loss defined as zero
};

LossValue cross_entropy(const Var& logits, std::span<const std::int32_t> targets,
                        std::span<const std::uint8_t> loss_mask,
                        Reduction reduction = Reduction::mean);

// Sigmoid two-class loss over a column of stop logits.
LossValue binary_cross_entropy(const Var& logits, std::span<const std::uint8_t> labels,
                               std::span<const std::uint8_t> loss_mask,
                               Reduction reduction = Reduction::mean);

double sigmoid(double x) noexcept;
double entropy_of_logits(std::span<const double> logits);
std::size_t argmax(std::span<const double> values);

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Coordinates sampled per parameter; 0 checks every coordinate.
  std::size_t samples_per_param = 8;
  std::uint64_t seed = 0;
};

// Max over sampled coordinates of
//   |analytic - central difference| / max(|analytic|, |numeric|, 1e-8).
double grad_check(const std::function<Var()>& loss_fn, std::span<const Var> params,
                  const GradCheckOptions& options = {});

}  // namespace hamburger::nn
