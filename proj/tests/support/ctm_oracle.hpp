// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0
//
// Plain-loop reference for the cross-temporal matching loss. Shares no code
// with the library: every quantity is summed element by element.

#pragma once

#include <cmath>
#include <vector>

namespace tarope::testing {

using Matrix = std::vector<std::vector<double>>;

inline double ctm_oracle(const Matrix& ea, const Matrix& ev, const std::vector<double>& ta,
                         const std::vector<double>& tv, double sigma, double tau) {
  const std::size_t na = ea.size(), nv = ev.size();
  Matrix g(na, std::vector<double>(nv)), s(na, std::vector<double>(nv));
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nv; ++j) {
      const double dt = ta[i] - tv[j];
      g[i][j] = std::exp(-dt * dt / (2.0 * sigma * sigma));
      double dot = 0.0;
      for (std::size_t c = 0; c < ea[i].size(); ++c) dot += ea[i][c] * ev[j][c];
      s[i][j] = dot / tau;
    }
  }
  double a2v = 0.0;
  for (std::size_t i = 0; i < na; ++i) {
    double gsum = 0.0, esum = 0.0;
    for (std::size_t j = 0; j < nv; ++j) {
      gsum += g[i][j];
      esum += std::exp(s[i][j]);
    }
    for (std::size_t j = 0; j < nv; ++j) {
      a2v -= (g[i][j] / gsum) * (s[i][j] - std::log(esum));
    }
  }
  double v2a = 0.0;
  for (std::size_t j = 0; j < nv; ++j) {
    double gsum = 0.0, esum = 0.0;
    for (std::size_t i = 0; i < na; ++i) {
      gsum += g[i][j];
      esum += std::exp(s[i][j]);
    }
    for (std::size_t i = 0; i < na; ++i) {
      v2a -= (g[i][j] / gsum) * (s[i][j] - std::log(esum));
    }
  }
  return 0.5 * (a2v / static_cast<double>(na) + v2a / static_cast<double>(nv));
}

/// Mean row entropy of the audio->video targets and mean column entropy of
/// the video->audio targets, halved and summed.
inline double ctm_floor_oracle(const std::vector<double>& ta, const std::vector<double>& tv,
                               double sigma) {
  const std::size_t na = ta.size(), nv = tv.size();
  auto g = [&](std::size_t i, std::size_t j) {
    const double dt = ta[i] - tv[j];
    return std::exp(-dt * dt / (2.0 * sigma * sigma));
  };
  double ha = 0.0, hv = 0.0;
  for (std::size_t i = 0; i < na; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < nv; ++j) z += g(i, j);
    for (std::size_t j = 0; j < nv; ++j) ha -= g(i, j) / z * std::log(g(i, j) / z);
  }
  for (std::size_t j = 0; j < nv; ++j) {
    double z = 0.0;
    for (std::size_t i = 0; i < na; ++i) z += g(i, j);
    for (std::size_t i = 0; i < na; ++i) hv -= g(i, j) / z * std::log(g(i, j) / z);
  }
  return 0.5 * (ha / static_cast<double>(na) + hv / static_cast<double>(nv));
}

}  // namespace tarope::testing
