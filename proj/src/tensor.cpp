// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tarope/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>

namespace tarope {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  node->data.assign(shape_size(shape), 0.0);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  detail::check_finite(values, "Tensor::from");
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::wrap(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("Tensor::wrap: " + std::to_string(values.size()) + " values for shape " +
                     shape_string(shape));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

std::size_t Tensor::rows() const {
  const auto& s = node_->shape;
  if (s.size() == 2) return s[0];
  if (s.size() <= 1) return 1;
  throw ShapeError("rows() needs rank <= 2, got " + shape_string(s));
}

std::size_t Tensor::cols() const {
  const auto& s = node_->shape;
  if (s.size() == 2) return s[1];
  if (s.size() == 1) return s[0];
  if (s.empty()) return 1;
  throw ShapeError("cols() needs rank <= 2, got " + shape_string(s));
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->data[0];
}

std::span<const double> Tensor::grad() const {
  return node_->grad_buffer();
}

Tensor Tensor::clone() const {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = node_->shape;
  node->data = node_->data;
  node->requires_grad = node_->requires_grad;
  return Tensor(std::move(node));
}

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape::Recording::Recording(GradTape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

GradTape::Recording::~Recording() { g_active_tape = previous_; }

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(std::string_view op, std::function<void()> backward) {
  entries_.push_back({op, std::move(backward)});
}

std::vector<std::string_view> GradTape::op_names() const {
  std::vector<std::string_view> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.push_back(e.op);
  return names;
}

void GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss");
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss that is not connected to any differentiable leaf");
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
  entries_.clear();
}

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (GradTape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void attach_backward(Tensor& out, std::string_view op, std::function<void()> backward) {
  out.set_requires_grad(true);
  GradTape::active()->record(op, std::move(backward));
}

void check_finite(std::span<const double> values, std::string_view op) {
  // All-ones exponent marks inf and NaN; the bitwise form vectorizes.
  constexpr std::uint64_t kExp = 0x7ff0000000000000ULL;
  std::uint64_t bad = 0;
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    bad |= static_cast<std::uint64_t>((bits & kExp) == kExp);
  }
  if (bad) throw NumericError("non-finite value produced by " + std::string(op));
}

}  // namespace detail

}  // namespace tarope
