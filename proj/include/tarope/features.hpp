// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "tarope/posenc.hpp"
#include "tarope/tensor.hpp"

namespace tarope {

/// Frame-major features of one stream. Frame i sits at time i / fps seconds.
struct FeatureSequence {
  Tensor frames;  // [T x d]
  double fps = 0.0;
  Modality modality = Modality::Audio;

  std::size_t length() const { return frames.defined() ? frames.rows() : 0; }
  std::size_t dim() const { return frames.defined() ? frames.cols() : 0; }
  double duration() const { return static_cast<double>(length()) / fps; }
  std::vector<double> timestamps() const { return frame_timestamps(length(), fps); }

  /// Throws ConfigError unless T >= 1 and fps > 0.
  void validate() const;

  static std::vector<double> frame_timestamps(std::size_t count, double fps);
};

}  // namespace tarope
