#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "edgedoc/errors.hpp"

namespace edgedoc {

using Scalar = float;
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major f32 tensor (NCHW for 4-D) with an optional gradient
// buffer. Copies are shallow; the buffer is shared.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<Scalar> data,
                          bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape[i]; }
  std::size_t size() const { return impl_->data.size(); }

  Scalar* data() { return impl_->data.data(); }
  const Scalar* data() const { return impl_->data.data(); }
  std::vector<Scalar>& vec() { return impl_->data; }
  const std::vector<Scalar>& vec() const { return impl_->data; }

  Scalar item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  // True if gradients must flow through this tensor: either a leaf that
  // requires grad or the output of a recorded primitive.
  bool needs_grad() const { return impl_->requires_grad || impl_->recorded; }
  bool recorded() const { return impl_->recorded; }
  void mark_recorded() const { impl_->recorded = true; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Gradient buffer, allocated (zeroed) on first access. Const because a
  // Tensor is a shared handle; the buffer it points at is always mutable.
  Scalar* grad() const;
  const std::vector<Scalar>& grad_vec() const { return impl_->grad; }
  void zero_grad() const { impl_->grad.assign(impl_->grad.size(), 0.0f); }
  void drop_grad() const { impl_->grad.clear(); }
  void accumulate_grad(const Scalar* g, std::size_t n) const;

  bool same_buffer(const Tensor& other) const { return impl_ == other.impl_; }

  // Deep copy of data (grad not copied).
  Tensor clone() const;

  bool all_finite() const;

 private:
  struct Impl {
    Shape shape;
    std::vector<Scalar> data;
    std::vector<Scalar> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool recorded = false;
  };
  std::shared_ptr<Impl> impl_;

  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
};

// Dynamic tape of recorded primitive applications. Constructing a Tape makes
// it the active recording context (RAII); destroying it restores the
// previous one. backward() consumes the tape: a second call is rejected.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(const char* op, std::function<void()> backward_fn);
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Seeds droot/droot = 1 and visits nodes exactly once in reverse order,
  // accumulating into leaf .grad buffers.
  void backward(Tensor& root);

 private:
  struct Node {
    const char* op;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;
};

// NaN/Inf detection after every primitive. Off by default (costs a full
// pass over each output); tests and the trainer's divergence guard turn it
// on where it matters.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

}  // namespace edgedoc
