// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. All operate on rank <= 2 tensors viewed as
// row-major matrices; a rank-1 tensor of length N behaves as a 1xN row.
// Shapes must match exactly except for add_bias, which broadcasts a length-N
// vector over the rows of an MxN matrix.

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "tarope/tensor.hpp"

namespace tarope {

/// Per-column validity flags for masked softmax (nonzero = attend).
using KeyMask = std::vector<std::uint8_t>;

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor gelu(const Tensor& x);

/// axis 1 normalizes each row, axis 0 each column. Max-subtracted.
Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);
/// Row softmax over the columns flagged in `key_mask`; masked entries are
/// exactly zero and never read.
Tensor masked_softmax_rows(const Tensor& x, const KeyMask& key_mask);

/// Per-row normalization with eps=1e-5 inside the square root, then
/// gain/bias over the last dimension. A constant row maps to `bias`.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Rows scaled to unit L2 norm: x / sqrt(|x|^2 + eps^2).
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-8);

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
/// out[r] = table[indices[r]]; gradients scatter-add back into the table.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);

/// Column means over all rows, shape [1 x N]. Zero rows is an error.
Tensor mean_rows(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// sum_i weights[i] * x[i] with constant weights.
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);

/// -log softmax(logits)[label] for a single row of logits.
Tensor cross_entropy(const Tensor& logits, std::size_t label);

/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

}  // namespace tarope
