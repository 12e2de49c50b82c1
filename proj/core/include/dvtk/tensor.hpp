#pragma once

#include <functional>
#include <memory>
#include <new>
#include <span>
#include <vector>

#include "dvtk/common.hpp"

DVTK_NAMESPACE_BEGIN

/// Allocator returning 64-byte aligned storage. Vectorised reductions peel
/// their first elements according to the address, so aligning every buffer
/// keeps results independent of where the allocator placed the data.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<Scalar, AlignedAllocator<Scalar>>;

namespace detail {

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Gradient buffer of input `i`, or nullptr when that input is a constant.
  Scalar* input_grad(std::size_t i);
  Scalar* ensure_grad();
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode automatic differentiation.
///
/// A Tensor is a shared handle: copies alias the same storage and graph
/// node. Operations in `dvtk::ops` record a backward closure when any input
/// requires a gradient and gradient recording is enabled (see NoGradGuard).
class Tensor {
 public:
  using BackwardFn = std::function<void(detail::Node&)>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0));
  Tensor(Shape shape, Buffer values);
  template <class Alloc>
  Tensor(Shape shape, const std::vector<Scalar, Alloc>& values)
      : Tensor(std::move(shape), Buffer(values.begin(), values.end())) {}

  static Tensor scalar(Scalar v) { return Tensor(Shape{}, Buffer{v}); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  /// Size of `axis`; negative axes count from the back.
  int dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<const Scalar> values() const { return node_->value; }
  /// Direct write access. Only meaningful for leaves (parameters, inputs).
  std::span<Scalar> mutable_values() { return node_->value; }
  Scalar item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  /// Accumulated gradient; empty if nothing has flowed into this tensor yet.
  std::span<const Scalar> grad() const { return node_->grad; }
  void zero_grad();

  /// Back-propagates from this tensor, seeding its gradient with ones.
  /// Intermediate gradients and the recorded graph are released afterwards;
  /// leaf gradients accumulate across calls until zero_grad().
  void backward() const;

  /// Same values, no gradient history.
  Tensor detach() const;
  /// Deep copy of the values into a fresh leaf.
  Tensor clone() const;

  static Tensor from_op(Shape shape, Buffer values, const std::vector<Tensor>& inputs,
                        BackwardFn backward);

  detail::Node* node() const { return node_.get(); }

 private:
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled() noexcept;

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

DVTK_NAMESPACE_END
