#include "edgedoc/tensor.hpp"

#include <cmath>
#include <sstream>

namespace edgedoc {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data.assign(shape_numel(impl->shape), 0.0f);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  t.impl_->data.assign(t.impl_->data.size(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<Scalar> data,
                         bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw ShapeError("from_data: " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(data.size()));
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Scalar Tensor::item() const {
  if (size() != 1)
    throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  return impl_->data[0];
}

Scalar* Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad.data();
}

void Tensor::accumulate_grad(const Scalar* g, std::size_t n) const {
  if (n != impl_->data.size())
    throw ShapeError("grad accumulation size mismatch");
  Scalar* dst = grad();
  for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
}

Tensor Tensor::clone() const {
  return from_data(impl_->shape, impl_->data, impl_->requires_grad);
}

bool Tensor::all_finite() const {
  for (Scalar v : impl_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
bool g_finite_checks = false;
}  // namespace

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const char* op, std::function<void()> backward_fn) {
  if (consumed_)
    throw ContractError(std::string("recording '") + op +
                        "' on a consumed graph");
  nodes_.push_back({op, std::move(backward_fn)});
}

void Tape::backward(Tensor& root) {
  if (consumed_) throw ContractError("backward on a consumed graph");
  if (root.size() != 1)
    throw ContractError("backward root must be scalar, got " +
                        shape_str(root.shape()));
  root.grad()[0] += 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward_fn();
  nodes_.clear();
  consumed_ = true;
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

}  // namespace edgedoc
