// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with reverse-mode gradients recorded on a GradTape.

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tarope {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Shared handle to a tensor node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Like from() but without the finiteness scan; for callers that already
  /// checked the values.
  static Tensor wrap(Shape shape, std::vector<double> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  // 2-D views; a rank-1 tensor is a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; zeros if nothing has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// Deep copy without gradient history.
  Tensor clone() const;

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& shared_node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of executed differentiable ops. Recording happens only
/// while a tape is active on the current thread (see GradTape::Recording).
class GradTape {
 public:
  struct Entry {
    std::string_view op;
    std::function<void()> backward;
  };

  class Recording {
   public:
    explicit Recording(GradTape& tape);
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    GradTape* previous_;
  };

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();

  void record(std::string_view op, std::function<void()> backward);
  std::size_t size() const { return entries_.size(); }
  std::vector<std::string_view> op_names() const;

  /// Seeds d(loss)/d(loss) = 1 and runs recorded rules in reverse order.
  /// Leaves accumulate into their grad buffers; the tape is cleared afterwards.
  void backward(const Tensor& loss);
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

namespace detail {

/// True if an active tape exists and any input requires a gradient.
bool should_record(std::initializer_list<const Tensor*> inputs);

/// Marks `out` as differentiable and records its backward rule.
void attach_backward(Tensor& out, std::string_view op, std::function<void()> backward);

/// Throws NumericError naming `op` if any element is NaN or infinite.
void check_finite(std::span<const double> values, std::string_view op);

}  // namespace detail

}  // namespace tarope
