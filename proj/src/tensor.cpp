#include "hamburger/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "hamburger/error.hpp"

namespace hamburger {

namespace {

std::size_t extent_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::argument: return "argument error";
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::configuration: return "configuration error";
    case ErrorKind::vocabulary: return "vocabulary error";
    case ErrorKind::ordering: return "ordering error";
    case ErrorKind::capacity: return "capacity error";
    case ErrorKind::domain: return "domain error";
    case ErrorKind::data: return "data error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::io: return "io error";
    case ErrorKind::invariant: return "invariant violation";
  }
  return "error";
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(extent_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (extent_product(shape_) != data_.size()) {
    fail(ErrorKind::dimension, "tensor shape " + hamburger::shape_string(shape_) +
                                   " does not match " + std::to_string(data_.size()) +
                                   " values");
  }
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.size() >= 2) return shape_[0];
  return shape_.empty() ? 0 : 1;
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.size() >= 2) return shape_[1];
  return shape_.empty() ? 0 : shape_[0];
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::append_rows(const Tensor& other) {
  if (shape_.empty()) {
    *this = Tensor({other.rows(), other.cols()}, std::vector<double>(other.data_));
    return;
  }
  if (rank() != 2 || other.cols() != cols()) {
    fail(ErrorKind::dimension, "append_rows: " + shape_string() + " vs " + other.shape_string());
  }
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  shape_[0] += other.rows();
}

void Tensor::reserve_rows(std::size_t rows) { data_.reserve(rows * cols()); }

std::string Tensor::shape_string() const { return hamburger::shape_string(shape_); }

}  // namespace hamburger
