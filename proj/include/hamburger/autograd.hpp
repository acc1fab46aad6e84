#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hamburger/tensor.hpp"

namespace hamburger::nn {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Output gradient is in `self.grad`; the function accumulates into parents.
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;

  // Allocates the gradient buffer on first use and adds `g` into it.
  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

// Handle onto a node of the reverse-mode graph. Cheap to copy.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  const std::vector<std::size_t>& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }

  // Seeds d(self)/d(self) = 1 and propagates. The root must hold one element.
  void backward() const;
  void zero_grad() const;

  // Leaf mutation, used by the optimizer and finite-difference checks only.
  Tensor& mutable_value() const { return node_->value; }
  Tensor& mutable_grad() const { return node_->grad_buffer(); }

  Node* node() const noexcept { return node_.get(); }
  const NodePtr& node_ptr() const noexcept { return node_; }

 private:
  NodePtr node_;
};

bool grad_enabled() noexcept;

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds a result node. Parents and the backward closure are only kept when
// recording is enabled and some parent needs a gradient.
Var make_result(Tensor value, std::vector<Var> parents, BackwardFn backward);

enum class ParamGroup { base, grafted };

const char* to_string(ParamGroup group) noexcept;
ParamGroup param_group_from_string(const std::string& name);

class Parameter {
 public:
  Parameter(std::string name, Tensor init, ParamGroup group, bool learnable = true);

  const std::string& name() const noexcept { return name_; }
  ParamGroup group() const noexcept { return group_; }
  bool learnable() const noexcept { return learnable_; }
  const Var& var() const noexcept { return var_; }
  const Tensor& value() const { return var_.value(); }
  Tensor& mutable_value() const { return var_.mutable_value(); }

 private:
  std::string name_;
  ParamGroup group_;
  bool learnable_;
  Var var_;
};

// Ordered registry; order defines checkpoint layout and optimizer iteration.
class ParameterSet {
 public:
  const Parameter& add(std::string name, Tensor init, ParamGroup group, bool learnable = true);

  const Parameter& at(const std::string& name) const;
  const Parameter* find(const std::string& name) const;
  const std::vector<std::unique_ptr<Parameter>>& items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }
  std::size_t scalar_count() const;

  void zero_grad() const;

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
};

}  // namespace hamburger::nn
