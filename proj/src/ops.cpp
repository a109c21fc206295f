// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tarope/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>

namespace tarope {

namespace {

using detail::TensorNode;

Tensor make_output(Shape shape, std::vector<double> values, std::string_view op) {
  detail::check_finite(values, op);
  return Tensor::wrap(std::move(shape), std::move(values));
}

// Upstream gradient of an op output, or nullptr if nothing flowed into it.
const std::vector<double>* upstream(const Tensor& out) {
  const auto& g = out.node()->grad;
  return g.empty() ? nullptr : &g;
}

std::vector<double>* sink(const Tensor& t) {
  return t.requires_grad() ? &t.node()->grad_buffer() : nullptr;
}

Shape matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_axis(int axis) {
  if (axis != 0 && axis != 1) throw ShapeError("softmax axis must be 0 or 1");
}

}  // namespace

namespace {

// Strided element access for a row-major matrix that may be logically
// transposed.
struct MatView {
  const double* p;
  std::size_t rows;  // logical
  std::size_t cols;
  bool trans;
  double operator()(std::size_t r, std::size_t c) const {
    return trans ? p[c * rows + r] : p[r * cols + c];
  }
};

std::vector<double> materialize(const MatView& v, bool transposed_layout) {
  // Returns v (transposed_layout=false) or v^T (true) in row-major storage.
  std::vector<double> out(v.rows * v.cols);
  for (std::size_t r = 0; r < v.rows; ++r) {
    for (std::size_t c = 0; c < v.cols; ++c) {
      if (transposed_layout) {
        out[c * v.rows + r] = v(r, c);
      } else {
        out[r * v.cols + c] = v(r, c);
      }
    }
  }
  return out;
}

// C[m x n] += A[m x k] * B[k x n].
//
// Every output is a single running sum in increasing p. Both loop orders
// follow it exactly, so the result does not depend on which one runs, and
// zero terms anywhere in the sum (masked keys) leave it unchanged.
void gemm(const MatView& a, const MatView& b, double* c) {
  const std::size_t m = a.rows, k = a.cols, n = b.cols;
  if (n >= 16) {
    // Row-wise axpy over contiguous B rows.
    std::vector<double> bstore;
    const double* bp = b.p;
    if (b.trans) {
      bstore = materialize(b, false);
      bp = bstore.data();
    }
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a(i, p);
        const double* brow = bp + p * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
      }
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += acc[j];
    }
    return;
  }
  // Dot products of contiguous A rows with contiguous B columns.
  std::vector<double> astore, btstore;
  const double* ap = a.p;
  if (a.trans) {
    astore = materialize(a, false);
    ap = astore.data();
  }
  const double* btp = b.p;
  if (!b.trans) {
    btstore = materialize(b, true);
    btp = btstore.data();
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = ap + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bcol = btp + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * bcol[p];
      c[i * n + j] += s;
    }
  }
}

MatView view(const double* p, std::size_t rows, std::size_t cols, bool trans = false) {
  return {p, rows, cols, trans};
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  std::vector<double> c(m * n, 0.0);
  gemm(view(a.data().data(), m, k), view(b.data().data(), k, n), c.data());
  Tensor out = make_output(matrix_shape(m, n), std::move(c), "matmul");
  if (detail::should_record({&a, &b})) {
    detail::attach_backward(out, "matmul", [a, b, out, m, k, n] {
      const auto* dc = upstream(out);
      if (!dc) return;
      // dA += dC B^T, dB += A^T dC
      if (auto* da = sink(a)) {
        gemm(view(dc->data(), m, n), view(b.data().data(), n, k, true), da->data());
      }
      if (auto* db = sink(b)) {
        gemm(view(a.data().data(), k, m, true), view(dc->data(), m, n), db->data());
      }
    });
  }
  return out;
}

// a [m x k] times b^T where b is [n x k].
Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()) + "^T");
  }
  std::vector<double> c(m * n, 0.0);
  gemm(view(a.data().data(), m, k), view(b.data().data(), k, n, true), c.data());
  Tensor out = make_output(matrix_shape(m, n), std::move(c), "matmul_nt");
  if (detail::should_record({&a, &b})) {
    detail::attach_backward(out, "matmul_nt", [a, b, out, m, k, n] {
      const auto* dc = upstream(out);
      if (!dc) return;
      // dA += dC B, dB += dC^T A
      if (auto* da = sink(a)) {
        gemm(view(dc->data(), m, n), view(b.data().data(), n, k), da->data());
      }
      if (auto* db = sink(b)) {
        gemm(view(dc->data(), n, m, true), view(a.data().data(), m, k), db->data());
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> t(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a.data()[i * n + j];
  Tensor out = make_output(matrix_shape(n, m), std::move(t), "transpose");
  if (detail::should_record({&a})) {
    detail::attach_backward(out, "transpose", [a, out, m, n] {
      const auto* g = upstream(out);
      auto* da = sink(a);
      if (!g || !da) return;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*da)[i * n + j] += (*g)[j * m + i];
    });
  }
  return out;
}

namespace {

template <typename Forward, typename GradA, typename GradB>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, std::string_view op, Forward f,
                          GradA ga, GradB gb) {
  require_same_shape(a, b, op);
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(a[i], b[i]);
  Tensor out = make_output(a.shape(), std::move(v), op);
  if (detail::should_record({&a, &b})) {
    detail::attach_backward(out, op, [a, b, out, ga, gb] {
      const auto* g = upstream(out);
      if (!g) return;
      if (auto* da = sink(a))
        for (std::size_t i = 0; i < g->size(); ++i) (*da)[i] += ga((*g)[i], a[i], b[i]);
      if (auto* db = sink(b))
        for (std::size_t i = 0; i < g->size(); ++i) (*db)[i] += gb((*g)[i], a[i], b[i]);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> v(a.data().begin(), a.data().end());
  for (double& x : v) x *= factor;
  Tensor out = make_output(a.shape(), std::move(v), "scale");
  if (detail::should_record({&a})) {
    detail::attach_backward(out, "scale", [a, out, factor] {
      const auto* g = upstream(out);
      auto* da = sink(a);
      if (!g || !da) return;
      for (std::size_t i = 0; i < g->size(); ++i) (*da)[i] += factor * (*g)[i];
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.size() != n) {
    throw ShapeError("add_bias: bias of size " + std::to_string(bias.size()) +
                     " does not match width " + std::to_string(n));
  }
  std::vector<double> v(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] += bias[j];
  Tensor out = make_output(x.shape(), std::move(v), "add_bias");
  if (detail::should_record({&x, &bias})) {
    detail::attach_backward(out, "add_bias", [x, bias, out, m, n] {
      const auto* g = upstream(out);
      if (!g) return;
      if (auto* dx = sink(x))
        for (std::size_t i = 0; i < g->size(); ++i) (*dx)[i] += (*g)[i];
      if (auto* db = sink(bias))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) (*db)[j] += (*g)[i * n + j];
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double z = x[i];
    v[i] = 0.5 * z * (1.0 + std::erf(z * inv_sqrt2));
  }
  Tensor out = make_output(x.shape(), std::move(v), "gelu");
  if (detail::should_record({&x})) {
    detail::attach_backward(out, "gelu", [x, out] {
      constexpr double inv_sqrt2pi = 0.39894228040143267794;
      const auto* g = upstream(out);
      auto* dx = sink(x);
      if (!g || !dx) return;
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double z = x[i];
        const double cdf = 0.5 * (1.0 + std::erf(z * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * z * z);
        (*dx)[i] += (*g)[i] * (cdf + z * pdf);
      }
    });
  }
  return out;
}

namespace {

// Visits each softmax "line" (row for axis 1, column for axis 0) as a
// strided range: base offset, stride, length.
template <typename Fn>
void for_each_line(std::size_t rows, std::size_t cols, int axis, Fn fn) {
  if (axis == 1) {
    for (std::size_t i = 0; i < rows; ++i) fn(i * cols, std::size_t{1}, cols);
  } else {
    for (std::size_t j = 0; j < cols; ++j) fn(j, cols, rows);
  }
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  require_axis(axis);
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> y(x.size());
  for_each_line(m, n, axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < len; ++t) mx = std::max(mx, x[base + t * stride]);
    double s = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      const double e = std::exp(x[base + t * stride] - mx);
      y[base + t * stride] = e;
      s += e;
    }
    for (std::size_t t = 0; t < len; ++t) y[base + t * stride] /= s;
  });
  Tensor out = make_output(x.shape(), std::move(y), "softmax");
  if (detail::should_record({&x})) {
    detail::attach_backward(out, "softmax", [x, out, m, n, axis] {
      const auto* g = upstream(out);
      auto* dx = sink(x);
      if (!g || !dx) return;
      for_each_line(m, n, axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
        double dot = 0.0;
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t i = base + t * stride;
          dot += (*g)[i] * out[i];
        }
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t i = base + t * stride;
          (*dx)[i] += out[i] * ((*g)[i] - dot);
        }
      });
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x, int axis) {
  require_axis(axis);
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> y(x.size());
  for_each_line(m, n, axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < len; ++t) mx = std::max(mx, x[base + t * stride]);
    double s = 0.0;
    for (std::size_t t = 0; t < len; ++t) s += std::exp(x[base + t * stride] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t t = 0; t < len; ++t) y[base + t * stride] = x[base + t * stride] - lse;
  });
  Tensor out = make_output(x.shape(), std::move(y), "log_softmax");
  if (detail::should_record({&x})) {
    detail::attach_backward(out, "log_softmax", [x, out, m, n, axis] {
      const auto* g = upstream(out);
      auto* dx = sink(x);
      if (!g || !dx) return;
      for_each_line(m, n, axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
        double gs = 0.0;
        for (std::size_t t = 0; t < len; ++t) gs += (*g)[base + t * stride];
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t i = base + t * stride;
          (*dx)[i] += (*g)[i] - std::exp(out[i]) * gs;
        }
      });
    });
  }
  return out;
}

Tensor masked_softmax_rows(const Tensor& x, const KeyMask& key_mask) {
  const std::size_t m = x.rows(), n = x.cols();
  if (key_mask.size() != n) {
    throw ShapeError("masked_softmax_rows: mask of size " + std::to_string(key_mask.size()) +
                     " for " + std::to_string(n) + " columns");
  }
  if (std::none_of(key_mask.begin(), key_mask.end(), [](auto v) { return v != 0; })) {
    throw ShapeError("masked_softmax_rows: every key is masked");
  }
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t base = i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (key_mask[j]) mx = std::max(mx, x[base + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!key_mask[j]) continue;
      const double e = std::exp(x[base + j] - mx);
      y[base + j] = e;
      s += e;
    }
    for (std::size_t j = 0; j < n; ++j)
      if (key_mask[j]) y[base + j] /= s;
  }
  Tensor out = make_output(x.shape(), std::move(y), "masked_softmax_rows");
  if (detail::should_record({&x})) {
    detail::attach_backward(out, "masked_softmax_rows", [x, out, m, n] {
      const auto* g = upstream(out);
      auto* dx = sink(x);
      if (!g || !dx) return;
      // Masked entries have zero output, so the unmasked softmax rule gives
      // them zero gradient automatically.
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t base = i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += (*g)[base + j] * out[base + j];
        for (std::size_t j = 0; j < n; ++j)
          (*dx)[base + j] += out[base + j] * ((*g)[base + j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.size() != n || bias.size() != n) {
    throw ShapeError("layer_norm: gain/bias must have size " + std::to_string(n));
  }
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(m);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t base = i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[base + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = x[base + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[base + j] = (x[base + j] - mu) * inv_std[i];
      y[base + j] = xhat[base + j] * gain[j] + bias[j];
    }
  }
  Tensor out = make_output(x.shape(), std::move(y), "layer_norm");
  if (detail::should_record({&x, &gain, &bias})) {
    detail::attach_backward(
        out, "layer_norm",
        [x, gain, bias, out, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
          const auto* g = upstream(out);
          if (!g) return;
          if (auto* dg = sink(gain))
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < n; ++j) (*dg)[j] += (*g)[i * n + j] * xhat[i * n + j];
          if (auto* db = sink(bias))
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < n; ++j) (*db)[j] += (*g)[i * n + j];
          if (auto* dx = sink(x)) {
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < m; ++i) {
              const std::size_t base = i * n;
              double sum_d = 0.0, sum_dx = 0.0;
              for (std::size_t j = 0; j < n; ++j) {
                const double d = (*g)[base + j] * gain[j];
                sum_d += d;
                sum_dx += d * xhat[base + j];
              }
              for (std::size_t j = 0; j < n; ++j) {
                const double d = (*g)[base + j] * gain[j];
                (*dx)[base + j] +=
                    inv_std[i] * (d - inv_n * sum_d - xhat[base + j] * inv_n * sum_dx);
              }
            }
          }
        });
  }
  return out;
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> inv(m);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += x[i * n + j] * x[i * n + j];
    inv[i] = 1.0 / std::sqrt(ss + eps * eps);
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = x[i * n + j] * inv[i];
  }
  Tensor out = make_output(x.shape(), std::move(y), "l2_normalize_rows");
  if (detail::should_record({&x})) {
    detail::attach_backward(out, "l2_normalize_rows", [x, out, m, n, inv = std::move(inv)] {
      const auto* g = upstream(out);
      auto* dx = sink(x);
      if (!g || !dx) return;
      // dy/dx = inv * (I - y y^T) for y = x * inv.
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += (*g)[i * n + j] * out[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          (*dx)[i * n + j] += inv[i] * ((*g)[i * n + j] - out[i * n + j] * dot);
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t m = x.rows(), n = x.cols();
  if (begin > end || end > m) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + std::to_string(m) + " rows");
  }
  std::vector<double> v(x.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                        x.data().begin() + static_cast<std::ptrdiff_t>(end * n));
  Tensor out = Tensor::from(matrix_shape(end - begin, n), std::move(v));
  if (detail::should_record({&x})) {
    detail::attach_backward(out, "slice_rows", [x, out, begin, n] {
      const auto* g = upstream(out);
      auto* dx = sink(x);
      if (!g || !dx) return;
      for (std::size_t i = 0; i < g->size(); ++i) (*dx)[begin * n + i] += (*g)[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t m = x.rows(), n = x.cols();
  if (begin > end || end > n) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + std::to_string(n) + " columns");
  }
  const std::size_t w = end - begin;
  std::vector<double> v(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) v[i * w + j] = x[i * n + begin + j];
  Tensor out = Tensor::from(matrix_shape(m, w), std::move(v));
  if (detail::should_record({&x})) {
    detail::attach_backward(out, "slice_cols", [x, out, begin, m, n, w] {
      const auto* g = upstream(out);
      auto* dx = sink(x);
      if (!g || !dx) return;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) (*dx)[i * n + begin + j] += (*g)[i * w + j];
    });
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  bool record = false;
  for (const auto& p : parts) {
    if (p.cols() != n) throw ShapeError("concat_rows: column counts differ");
    total += p.rows();
    record = record || detail::should_record({&p});
  }
  std::vector<double> v;
  v.reserve(total * n);
  for (const auto& p : parts) v.insert(v.end(), p.data().begin(), p.data().end());
  Tensor out = Tensor::from(matrix_shape(total, n), std::move(v));
  if (record) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    detail::attach_backward(out, "concat_rows", [inputs = std::move(inputs), out] {
      const auto* g = upstream(out);
      if (!g) return;
      std::size_t offset = 0;
      for (const auto& p : inputs) {
        if (auto* dp = sink(p))
          for (std::size_t i = 0; i < p.size(); ++i) (*dp)[i] += (*g)[offset + i];
        offset += p.size();
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  bool record = false;
  for (const auto& p : parts) {
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
    record = record || detail::should_record({&p});
  }
  std::vector<double> v(m * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) v[i * total + offset + j] = p[i * w + j];
    offset += w;
  }
  Tensor out = Tensor::from(matrix_shape(m, total), std::move(v));
  if (record) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    detail::attach_backward(out, "concat_cols", [inputs = std::move(inputs), out, m, total] {
      const auto* g = upstream(out);
      if (!g) return;
      std::size_t offset = 0;
      for (const auto& p : inputs) {
        const std::size_t w = p.cols();
        if (auto* dp = sink(p))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) (*dp)[i * w + j] += (*g)[i * total + offset + j];
        offset += w;
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  const std::size_t rows = table.rows(), n = table.cols();
  std::vector<double> v(indices.size() * n);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[r]) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(indices[r] * n), n,
                v.begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  Tensor out = Tensor::from(matrix_shape(indices.size(), n), std::move(v));
  if (detail::should_record({&table})) {
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    detail::attach_backward(out, "gather_rows", [table, out, n, idx = std::move(idx)] {
      const auto* g = upstream(out);
      auto* dt = sink(table);
      if (!g || !dt) return;
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < n; ++j) (*dt)[idx[r] * n + j] += (*g)[r * n + j];
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  if (m == 0) throw ShapeError("mean_rows: cannot pool zero rows");
  std::vector<double> v(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[j] += x[i * n + j];
  const double inv = 1.0 / static_cast<double>(m);
  for (double& e : v) e *= inv;
  Tensor out = make_output(matrix_shape(1, n), std::move(v), "mean_rows");
  if (detail::should_record({&x})) {
    detail::attach_backward(out, "mean_rows", [x, out, m, n, inv] {
      const auto* g = upstream(out);
      auto* dx = sink(x);
      if (!g || !dx) return;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*dx)[i * n + j] += (*g)[j] * inv;
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = make_output({}, {s}, "sum");
  if (detail::should_record({&x})) {
    detail::attach_backward(out, "sum", [x, out] {
      const auto* g = upstream(out);
      auto* dx = sink(x);
      if (!g || !dx) return;
      for (double& d : *dx) d += (*g)[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (weights.size() != x.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(x.size()) + " values");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += weights[i] * x[i];
  Tensor out = make_output({}, {s}, "weighted_sum");
  if (detail::should_record({&x})) {
    std::vector<double> w(weights.begin(), weights.end());
    detail::attach_backward(out, "weighted_sum", [x, out, w = std::move(w)] {
      const auto* g = upstream(out);
      auto* dx = sink(x);
      if (!g || !dx) return;
      for (std::size_t i = 0; i < w.size(); ++i) (*dx)[i] += (*g)[0] * w[i];
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  if (logits.rows() != 1) throw ShapeError("cross_entropy: expects a single row of logits");
  const std::size_t n = logits.cols();
  if (label >= n) {
    throw ShapeError("cross_entropy: label " + std::to_string(label) + " outside " +
                     std::to_string(n) + " classes");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits.data()) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits.data()) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  Tensor out = make_output({}, {lse - logits[label]}, "cross_entropy");
  if (detail::should_record({&logits})) {
    detail::attach_backward(out, "cross_entropy", [logits, out, label, lse, n] {
      const auto* g = upstream(out);
      auto* dl = sink(logits);
      if (!g || !dl) return;
      for (std::size_t j = 0; j < n; ++j) {
        const double p = std::exp(logits[j] - lse);
        (*dl)[j] += (*g)[0] * (p - (j == label ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout rate must be < 1");
  // Drop when a raw 64-bit draw falls below p * 2^64.
  const auto threshold = static_cast<std::uint64_t>(std::ldexp(p, 64));
  const double s = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (double& m : mask) m = rng() < threshold ? 0.0 : s;
  return mul(x, Tensor::wrap(x.shape(), std::move(mask)));
}

}  // namespace tarope
