#include "hamburger/autograd.hpp"

#include <algorithm>
#include <unordered_set>

#include "hamburger/error.hpp"

namespace hamburger::nn {

namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

void Node::accumulate(const Tensor& g) {
  Tensor& buf = grad_buffer();
  auto dst = buf.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor& Node::grad_buffer() {
  if (!grad.same_shape(value)) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::backward() const {
  if (!node_) fail(ErrorKind::argument, "backward on undefined variable");
  if (node_->value.size() != 1) {
    fail(ErrorKind::dimension, "backward root must be scalar, got " + node_->value.shape_string());
  }
  if (!node_->requires_grad) return;

  // Post-order DFS gives a topological order; walk it in reverse.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.same_shape(node->value)) node->backward(*node);
  }
  // Interior gradients are not needed once propagated.
  for (Node* node : order) {
    if (node->backward) node->grad = Tensor();
  }
}

void Var::zero_grad() const {
  if (node_ && node_->grad.same_shape(node_->value)) node_->grad.fill(0.0);
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> parents, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node_ptr());
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

const char* to_string(ParamGroup group) noexcept {
  return group == ParamGroup::base ? "base" : "grafted";
}

ParamGroup param_group_from_string(const std::string& name) {
  if (name == "base") return ParamGroup::base;
  if (name == "grafted") return ParamGroup::grafted;
  fail(ErrorKind::data, "unknown parameter group '" + name + "'");
}

Parameter::Parameter(std::string name, Tensor init, ParamGroup group, bool learnable)
    : name_(std::move(name)), group_(group), learnable_(learnable),
      var_(std::move(init), learnable) {}

const Parameter& ParameterSet::add(std::string name, Tensor init, ParamGroup group,
                                   bool learnable) {
  if (find(name)) fail(ErrorKind::configuration, "duplicate parameter '" + name + "'");
  items_.push_back(std::make_unique<Parameter>(std::move(name), std::move(init), group, learnable));
  return *items_.back();
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : items_) {
    if (p->name() == name) return p.get();
  }
  return nullptr;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  const Parameter* p = find(name);
  if (!p) fail(ErrorKind::data, "missing parameter '" + name + "'");
  return *p;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p->value().size();
  return n;
}

void ParameterSet::zero_grad() const {
  for (const auto& p : items_) p->var().zero_grad();
}

}  // namespace hamburger::nn
