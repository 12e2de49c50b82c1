#include "dvtk/tensor.hpp"

#include <algorithm>
#include <unordered_set>

DVTK_NAMESPACE_BEGIN

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Scalar* Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), Scalar(0));
  return grad.data();
}

Scalar* Node::input_grad(std::size_t i) {
  Node* in = inputs[i].get();
  if (!in || !in->requires_grad) return nullptr;
  return in->ensure_grad();
}

}  // namespace detail

Tensor::Tensor(Shape shape, Scalar fill) : node_(std::make_shared<detail::Node>()) {
  const auto n = shape_numel(shape);
  node_->shape = std::move(shape);
  node_->value.assign(static_cast<std::size_t>(n), fill);
}

Tensor::Tensor(Shape shape, Buffer values) : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    fail(ErrorKind::kShape, "tensor shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

int Tensor::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) fail(ErrorKind::kShape, "axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(a)];
}

Scalar Tensor::item() const {
  if (numel() != 1) fail(ErrorKind::kShape, "item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
  Tensor out;
  out.node_ = std::make_shared<detail::Node>();
  out.node_->shape = node_->shape;
  out.node_->value = node_->value;
  return out;
}

Tensor Tensor::clone() const { return detach(); }

Tensor Tensor::from_op(Shape shape, Buffer values, const std::vector<Tensor>& inputs,
                       BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!any) return out;
  auto& node = *out.node_;
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (const auto& t : inputs) node.inputs.push_back(t.node_);
  node.backward = std::move(backward);
  return out;
}

void Tensor::backward() const {
  if (!node_->requires_grad) return;

  // Iterative post-order DFS yields a topological order (inputs first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      detail::Node* child = n->inputs[next++].get();
      if (child && child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  Scalar* seed = node_->ensure_grad();
  std::fill(seed, seed + node_->value.size(), Scalar(1));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (detail::Node* n : order) {
    if (n->backward) {
      n->grad.clear();
      n->grad.shrink_to_fit();
      n->backward = nullptr;
      n->inputs.clear();
    }
  }
}

DVTK_NAMESPACE_END
