#include "hamburger/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "hamburger/error.hpp"

namespace hamburger::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_mat(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

MutMap as_mat(Tensor& t) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

// Gradient buffer of parent `i`, or nullptr when it does not need one.
Tensor* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

std::string pair_shape(const Var& a, const Var& b) {
  return a.value().shape_string() + " vs " + b.value().shape_string();
}

Tensor matrix_like(std::size_t rows, std::size_t cols) { return Tensor::matrix(rows, cols); }

// Shared kernel for both attention overloads. Saves per-head probabilities
// when `probs` is non-null.
Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, const Mask& mask,
                         std::size_t n_heads, std::vector<RowMat>* probs) {
  const std::size_t n = q.rows();
  const std::size_t m = k.rows();
  const std::size_t d = q.cols();
  if (!(n_heads > 0 && d % n_heads == 0))
    fail(ErrorKind::dimension, "attention: width " + std::to_string(d) + " not divisible by " +
                                   std::to_string(n_heads) + " heads");
  if (k.cols() != d)
    fail(ErrorKind::dimension,
         "attention: query head dims " + q.shape_string() + " vs keys " + k.shape_string());
  if (!(v.rows() == m && v.cols() == d))
    fail(ErrorKind::dimension,
         "attention: keys " + k.shape_string() + " vs values " + v.shape_string());
  if (!(mask.rows() == n && mask.cols() == m))
    fail(ErrorKind::dimension, "attention: mask " + std::to_string(mask.rows()) + "x" +
                                   std::to_string(mask.cols()) + " vs scores " + std::to_string(n) +
                                   "x" + std::to_string(m));
  for (std::size_t r = 0; r < n; ++r) {
    bool any = false;
    for (std::size_t c = 0; c < m && !any; ++c) any = mask(r, c);
    if (!any) fail(ErrorKind::dimension, "attention: mask row " + std::to_string(r) + " hides every key");
  }

  const std::size_t hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor out = matrix_like(n, d);
  auto Q = as_mat(q);
  auto K = as_mat(k);
  auto V = as_mat(v);
  auto O = as_mat(out);
  if (probs) probs->assign(n_heads, RowMat());
  RowMat scores(n, m);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto off = static_cast<Eigen::Index>(h * hd);
    const auto w = static_cast<Eigen::Index>(hd);
    scores.noalias() = Q.middleCols(off, w) * K.middleCols(off, w).transpose();
    for (std::size_t r = 0; r < n; ++r) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < m; ++c) {
        if (mask(r, c)) mx = std::max(mx, scores(r, c) * scale);
      }
      double total = 0.0;
      for (std::size_t c = 0; c < m; ++c) {
        const double e = mask(r, c) ? std::exp(scores(r, c) * scale - mx) : 0.0;
        scores(r, c) = e;
        total += e;
      }
      scores.row(static_cast<Eigen::Index>(r)) /= total;
    }
    O.middleCols(off, w).noalias() = scores * V.middleCols(off, w);
    if (probs) (*probs)[h] = scores;
  }
  return out;
}

void attention_backward(const Tensor& g, const Tensor& q, const Tensor& k, const Tensor& v,
                        const std::vector<RowMat>& probs, std::size_t n_heads, Tensor* dq,
                        Tensor* dk, Tensor* dv) {
  const std::size_t d = q.cols();
  const std::size_t hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  auto G = as_mat(g);
  auto Q = as_mat(q);
  auto K = as_mat(k);
  auto V = as_mat(v);
  RowMat dp;
  RowMat ds;
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto off = static_cast<Eigen::Index>(h * hd);
    const auto w = static_cast<Eigen::Index>(hd);
    const RowMat& P = probs[h];
    if (dv) as_mat(*dv).middleCols(off, w).noalias() += P.transpose() * G.middleCols(off, w);
    if (!dq && !dk) continue;
    dp.noalias() = G.middleCols(off, w) * V.middleCols(off, w).transpose();
    ds = P.cwiseProduct(dp);
    const Eigen::VectorXd row_dot = ds.rowwise().sum();
    ds -= P.cwiseProduct(row_dot.replicate(1, P.cols()));
    ds *= scale;
    if (dq) as_mat(*dq).middleCols(off, w).noalias() += ds * K.middleCols(off, w);
    if (dk) as_mat(*dk).middleCols(off, w).noalias() += ds.transpose() * Q.middleCols(off, w);
  }
}

}  // namespace

Mask::Mask(std::size_t rows, std::size_t cols, bool fill)
    : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

Mask Mask::causal(std::size_t n) {
  Mask m(n, n, false);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c <= r; ++c) m.set(r, c, true);
  }
  return m;
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) fail(ErrorKind::dimension, "matmul: " + pair_shape(a, b));
  Tensor out = matrix_like(a.rows(), b.cols());
  as_mat(out).noalias() = as_mat(a.value()) * as_mat(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (Tensor* ga = parent_grad(self, 0)) {
      as_mat(*ga).noalias() += as_mat(self.grad) * as_mat(bv).transpose();
    }
    if (Tensor* gb = parent_grad(self, 1)) {
      as_mat(*gb).noalias() += as_mat(av).transpose() * as_mat(self.grad);
    }
  });
}

Var add(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) fail(ErrorKind::dimension, "add: " + pair_shape(a, b));
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (Tensor* g = parent_grad(self, i)) {
        auto dst = g->data();
        auto src = self.grad.data();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
  });
}

Var add_bias(const Var& x, const Var& bias) {
  if (bias.value().size() != x.cols()) fail(ErrorKind::dimension, "add_bias: " + pair_shape(x, bias));
  Tensor out = x.value();
  const std::size_t n = out.rows();
  const std::size_t m = out.cols();
  auto b = bias.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < m; ++c) row[c] += b[c];
  }
  return make_result(std::move(out), {x, bias}, [](Node& self) {
    if (Tensor* gx = parent_grad(self, 0)) {
      auto dst = gx->data();
      auto src = self.grad.data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    if (Tensor* gb = parent_grad(self, 1)) {
      const std::size_t rows = self.grad.rows();
      auto dst = gb->data();
      for (std::size_t r = 0; r < rows; ++r) {
        auto row = std::as_const(self.grad).row(r);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += row[c];
      }
    }
  });
}

Var mul(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) fail(ErrorKind::dimension, "mul: " + pair_shape(a, b));
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    auto g = self.grad.data();
    if (Tensor* ga = parent_grad(self, 0)) {
      auto dst = ga->data();
      auto other = self.parents[1]->value.data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g[j] * other[j];
    }
    if (Tensor* gb = parent_grad(self, 1)) {
      auto dst = gb->data();
      auto other = self.parents[0]->value.data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g[j] * other[j];
    }
  });
}

Var scale(const Var& x, double s) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= s;
  return make_result(std::move(out), {x}, [s](Node& self) {
    if (Tensor* gx = parent_grad(self, 0)) {
      auto dst = gx->data();
      auto src = self.grad.data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += s * src[j];
    }
  });
}

Var silu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v * sigmoid(v);
  return make_result(std::move(out), {x}, [](Node& self) {
    if (Tensor* gx = parent_grad(self, 0)) {
      auto dst = gx->data();
      auto in = self.parents[0]->value.data();
      auto g = self.grad.data();
      for (std::size_t j = 0; j < dst.size(); ++j) {
        const double s = sigmoid(in[j]);
        dst[j] += g[j] * s * (1.0 + in[j] * (1.0 - s));
      }
    }
  });
}

Var rms_norm(const Var& x, const Var& gain, double eps) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (gain.value().size() != d) fail(ErrorKind::dimension, "rms_norm: " + pair_shape(x, gain));
  Tensor out = matrix_like(n, d);
  std::vector<double> inv_rms(n);
  auto g = gain.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    auto row = x.value().row(r);
    double ss = 0.0;
    for (double v : row) ss += v * v;
    inv_rms[r] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    auto o = out.row(r);
    for (std::size_t c = 0; c < d; ++c) o[c] = row[c] * inv_rms[r] * g[c];
  }
  return make_result(std::move(out), {x, gain}, [inv_rms = std::move(inv_rms)](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    auto gv = self.parents[1]->value.data();
    Tensor* gx = parent_grad(self, 0);
    Tensor* gg = parent_grad(self, 1);
    const std::size_t rows = xv.rows();
    const std::size_t d = xv.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      auto xr = xv.row(r);
      auto dy = std::as_const(self.grad).row(r);
      if (gg) {
        auto dst = gg->data();
        for (std::size_t c = 0; c < d; ++c) dst[c] += dy[c] * xr[c] * inv_rms[r];
      }
      if (gx) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += dy[c] * gv[c] * xr[c] * inv_rms[r];
        dot /= static_cast<double>(d);
        auto dst = gx->row(r);
        for (std::size_t c = 0; c < d; ++c) {
          dst[c] += inv_rms[r] * (dy[c] * gv[c] - xr[c] * inv_rms[r] * dot);
        }
      }
    }
  });
}

Var rope(const Var& x, std::span<const std::int64_t> positions, std::size_t n_heads,
         double base) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (!(n_heads > 0 && d % n_heads == 0))
    fail(ErrorKind::configuration, "rope: width " + std::to_string(d) + " not divisible by heads");
  const std::size_t hd = d / n_heads;
  if (hd % 2 != 0)
    fail(ErrorKind::configuration, "rope: head dimension " + std::to_string(hd) + " is odd");
  if (positions.size() != n)
    fail(ErrorKind::dimension, "rope: " + std::to_string(positions.size()) + " position ids for " +
                                   std::to_string(n) + " rows");
  const std::size_t half = hd / 2;
  // cos/sin table, one row per sequence row.
  std::vector<double> cs(n * half);
  std::vector<double> sn(n * half);
  for (std::size_t r = 0; r < n; ++r) {
    require(positions[r] >= 0, ErrorKind::argument, "rope: negative position id");
    for (std::size_t i = 0; i < half; ++i) {
      const double freq =
          std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
      const double angle = static_cast<double>(positions[r]) * freq;
      cs[r * half + i] = std::cos(angle);
      sn[r * half + i] = std::sin(angle);
    }
  }
  Tensor out = matrix_like(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    auto in = x.value().row(r);
    auto o = out.row(r);
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = h * hd;
      for (std::size_t i = 0; i < half; ++i) {
        const double c = cs[r * half + i];
        const double s = sn[r * half + i];
        const double a = in[off + i];
        const double b = in[off + i + half];
        o[off + i] = a * c - b * s;
        o[off + i + half] = a * s + b * c;
      }
    }
  }
  return make_result(std::move(out), {x},
                     [cs = std::move(cs), sn = std::move(sn), n_heads, hd, half](Node& self) {
                       Tensor* gx = parent_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t r = 0; r < self.grad.rows(); ++r) {
                         auto g = std::as_const(self.grad).row(r);
                         auto dst = gx->row(r);
                         for (std::size_t h = 0; h < n_heads; ++h) {
                           const std::size_t off = h * hd;
                           for (std::size_t i = 0; i < half; ++i) {
                             const double c = cs[r * half + i];
                             const double s = sn[r * half + i];
                             const double ga = g[off + i];
                             const double gb = g[off + i + half];
                             dst[off + i] += ga * c + gb * s;
                             dst[off + i + half] += -ga * s + gb * c;
                           }
                         }
                       }
                     });
}

Var attention(const Var& queries, const Var& keys, const Var& values, const Mask& mask,
              std::size_t n_heads) {
  const bool record = grad_enabled() &&
                      (queries.requires_grad() || keys.requires_grad() || values.requires_grad());
  auto probs = std::make_shared<std::vector<RowMat>>();
  Tensor out = attention_forward(queries.value(), keys.value(), values.value(), mask, n_heads,
                                 record ? probs.get() : nullptr);
  return make_result(std::move(out), {queries, keys, values}, [probs, n_heads](Node& self) {
    attention_backward(self.grad, self.parents[0]->value, self.parents[1]->value,
                       self.parents[2]->value, *probs, n_heads, parent_grad(self, 0),
                       parent_grad(self, 1), parent_grad(self, 2));
  });
}

Var attention(const Var& queries, const Tensor& keys, const Tensor& values, const Mask& mask,
              std::size_t n_heads) {
  const bool record = grad_enabled() && queries.requires_grad();
  if (!record) {
    return Var(attention_forward(queries.value(), keys, values, mask, n_heads, nullptr));
  }
  auto probs = std::make_shared<std::vector<RowMat>>();
  Tensor out = attention_forward(queries.value(), keys, values, mask, n_heads, probs.get());
  return make_result(std::move(out), {queries},
                     [probs, n_heads, k = keys, v = values](Node& self) {
                       attention_backward(self.grad, self.parents[0]->value, k, v, *probs,
                                          n_heads, parent_grad(self, 0), nullptr, nullptr);
                     });
}

Var embedding(const Var& table, std::span<const std::int32_t> ids) {
  const std::size_t vocab = table.rows();
  const std::size_t d = table.cols();
  Tensor out = matrix_like(ids.size(), d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      fail(ErrorKind::vocabulary, "token id " + std::to_string(ids[r]) +
                                      " outside vocabulary of " + std::to_string(vocab));
    }
    auto src = table.value().row(static_cast<std::size_t>(ids[r]));
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return make_result(std::move(out), {table},
                     [ids = std::vector<std::int32_t>(ids.begin(), ids.end())](Node& self) {
                       Tensor* gt = parent_grad(self, 0);
                       if (!gt) return;
                       for (std::size_t r = 0; r < ids.size(); ++r) {
                         auto g = std::as_const(self.grad).row(r);
                         auto dst = gt->row(static_cast<std::size_t>(ids[r]));
                         for (std::size_t c = 0; c < g.size(); ++c) dst[c] += g[c];
                       }
                     });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), ErrorKind::argument, "concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t n = 0;
  for (const Var& p : parts) {
    if (p.cols() != d) fail(ErrorKind::dimension, "concat_rows: " + pair_shape(parts.front(), p));
    n += p.rows();
  }
  Tensor out = matrix_like(n, d);
  std::vector<std::size_t> offsets;
  offsets.reserve(parts.size());
  std::size_t at = 0;
  for (const Var& p : parts) {
    offsets.push_back(at);
    auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(at * d));
    at += p.rows();
  }
  return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                     [offsets = std::move(offsets), d](Node& self) {
                       for (std::size_t i = 0; i < self.parents.size(); ++i) {
                         Tensor* g = parent_grad(self, i);
                         if (!g) continue;
                         auto src = self.grad.data().subspan(offsets[i] * d, g->size());
                         auto dst = g->data();
                         for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                       }
                     });
}

Var slice_rows(const Var& x, std::size_t start, std::size_t count) {
  if (!(start + count <= x.rows() && count > 0))
    fail(ErrorKind::dimension, "slice_rows: [" + std::to_string(start) + ", " +
                                   std::to_string(start + count) + ") of " +
                                   x.value().shape_string());
  const std::size_t d = x.cols();
  auto src = x.value().data().subspan(start * d, count * d);
  Tensor out({count, d}, std::vector<double>(src.begin(), src.end()));
  return make_result(std::move(out), {x}, [start, d](Node& self) {
    Tensor* g = parent_grad(self, 0);
    if (!g) return;
    auto dst = g->data().subspan(start * d, self.grad.size());
    auto s = self.grad.data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += s[j];
  });
}

Var sum_rows(const Var& x) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  Tensor out = matrix_like(1, d);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = x.value().row(r);
    for (std::size_t c = 0; c < d; ++c) out[c] += row[c];
  }
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < g->rows(); ++r) {
      auto dst = g->row(r);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += self.grad[c];
    }
  });
}

Var mean_rows(const Var& x) { return scale(sum_rows(x), 1.0 / static_cast<double>(x.rows())); }

Var softmax_cols(const Var& x) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  Tensor out = matrix_like(n, d);
  for (std::size_t c = 0; c < d; ++c) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < n; ++r) mx = std::max(mx, x.value()(r, c));
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      out(r, c) = std::exp(x.value()(r, c) - mx);
      total += out(r, c);
    }
    for (std::size_t r = 0; r < n; ++r) out(r, c) /= total;
  }
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor* g = parent_grad(self, 0);
    if (!g) return;
    // Output values are recomputed from the input to keep the closure small.
    const Tensor& in = self.parents[0]->value;
    const std::size_t n = in.rows();
    const std::size_t d = in.cols();
    std::vector<double> p(n);
    for (std::size_t c = 0; c < d; ++c) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < n; ++r) mx = std::max(mx, in(r, c));
      double total = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        p[r] = std::exp(in(r, c) - mx);
        total += p[r];
      }
      double dot = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        p[r] /= total;
        dot += p[r] * self.grad(r, c);
      }
      for (std::size_t r = 0; r < n; ++r) (*g)(r, c) += p[r] * (self.grad(r, c) - dot);
    }
  });
}

Var sum_all(const Var& x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return make_result(Tensor::scalar(total), {x}, [](Node& self) {
    Tensor* g = parent_grad(self, 0);
    if (!g) return;
    for (double& v : g->data()) v += self.grad[0];
  });
}

LossValue cross_entropy(const Var& logits, std::span<const std::int32_t> targets,
                        std::span<const std::uint8_t> loss_mask, Reduction reduction) {
  const std::size_t n = logits.rows();
  const std::size_t vocab = logits.cols();
  if (!(targets.size() == n && loss_mask.size() == n))
    fail(ErrorKind::dimension, "cross_entropy: " + std::to_string(n) + " logit rows, " +
                                   std::to_string(targets.size()) + " targets, " +
                                   std::to_string(loss_mask.size()) + " mask bits");
  LossValue result;
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!loss_mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      fail(ErrorKind::vocabulary, "cross_entropy: target " + std::to_string(targets[r]));
    }
    auto row = logits.value().row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    total += mx + std::log(z) - row[static_cast<std::size_t>(targets[r])];
    ++count;
  }
  result.count = count;
  result.empty_mask = count == 0;
  const double denom =
      (reduction == Reduction::mean && count > 0) ? static_cast<double>(count) : 1.0;
  result.loss = make_result(
      Tensor::scalar(total / denom), {logits},
      [t = std::vector<std::int32_t>(targets.begin(), targets.end()),
       m = std::vector<std::uint8_t>(loss_mask.begin(), loss_mask.end()), denom](Node& self) {
        Tensor* g = parent_grad(self, 0);
        if (!g) return;
        const Tensor& lv = self.parents[0]->value;
        const double scale_by = self.grad[0] / denom;
        for (std::size_t r = 0; r < lv.rows(); ++r) {
          if (!m[r]) continue;
          auto row = lv.row(r);
          const double mx = *std::max_element(row.begin(), row.end());
          double z = 0.0;
          for (double v : row) z += std::exp(v - mx);
          auto dst = g->row(r);
          for (std::size_t c = 0; c < row.size(); ++c) {
            dst[c] += scale_by * std::exp(row[c] - mx) / z;
          }
          dst[static_cast<std::size_t>(t[r])] -= scale_by;
        }
      });
  return result;
}

LossValue binary_cross_entropy(const Var& logits, std::span<const std::uint8_t> labels,
                               std::span<const std::uint8_t> loss_mask, Reduction reduction) {
  const std::size_t n = logits.value().size();
  if (!(labels.size() == n && loss_mask.size() == n))
    fail(ErrorKind::dimension, "binary_cross_entropy: " + std::to_string(n) + " logits, " +
                                   std::to_string(labels.size()) + " labels, " +
                                   std::to_string(loss_mask.size()) + " mask bits");
  LossValue result;
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!loss_mask[i]) continue;
    const double z = logits.value()[i];
    // softplus(z) - y z, written to avoid overflow.
    total += std::max(z, 0.0) - (labels[i] ? z : 0.0) + std::log1p(std::exp(-std::abs(z)));
    ++count;
  }
  result.count = count;
  result.empty_mask = count == 0;
  const double denom =
      (reduction == Reduction::mean && count > 0) ? static_cast<double>(count) : 1.0;
  result.loss = make_result(
      Tensor::scalar(total / denom), {logits},
      [y = std::vector<std::uint8_t>(labels.begin(), labels.end()),
       m = std::vector<std::uint8_t>(loss_mask.begin(), loss_mask.end()), denom](Node& self) {
        Tensor* g = parent_grad(self, 0);
        if (!g) return;
        const Tensor& lv = self.parents[0]->value;
        for (std::size_t i = 0; i < lv.size(); ++i) {
          if (!m[i]) continue;
          (*g)[i] += self.grad[0] * (sigmoid(lv[i]) - (y[i] ? 1.0 : 0.0)) / denom;
        }
      });
  return result;
}

double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double entropy_of_logits(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double log_z = std::log(z);
  double h = 0.0;
  for (double v : logits) {
    const double log_p = v - mx - log_z;
    h -= std::exp(log_p) * log_p;
  }
  return std::max(h, 0.0);
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) -
                                  values.begin());
}

double grad_check(const std::function<Var()>& loss_fn, std::span<const Var> params,
                  const GradCheckOptions& options) {
  if (options.epsilon < 1e-7 || options.epsilon > 1e-3) {
    fail(ErrorKind::argument, "grad_check: epsilon outside [1e-7, 1e-3]");
  }
  for (const Var& p : params) p.zero_grad();
  {
    Var loss = loss_fn();
    if (!loss.value().all_finite()) fail(ErrorKind::numeric, "grad_check: non-finite loss");
    loss.backward();
  }
  std::mt19937_64 rng(options.seed);
  double worst = 0.0;
  NoGradGuard no_grad;
  for (const Var& p : params) {
    Tensor& value = p.mutable_value();
    const Tensor analytic = p.node()->grad.same_shape(value) ? p.grad() : Tensor(value.shape());
    std::vector<std::size_t> coords(value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.samples_per_param != 0 && coords.size() > options.samples_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.samples_per_param);
    }
    for (std::size_t i : coords) {
      const double original = value[i];
      value[i] = original + options.epsilon;
      const double plus = loss_fn().value()[0];
      value[i] = original - options.epsilon;
      const double minus = loss_fn().value()[0];
      value[i] = original;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        fail(ErrorKind::numeric, "grad_check: non-finite loss under perturbation");
      }
      const double numeric = (plus - minus) / (2.0 * options.epsilon);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace hamburger::nn
