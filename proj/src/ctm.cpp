// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tarope/ctm.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <string>

#include "tarope/ops.hpp"

namespace tarope {

void CtmConfig::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("ctm sigma must be positive");
  if (!(tau > 0.0)) throw ConfigError("ctm tau must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("ctm lambda must be non-negative");
}

AffinityMatrix gaussian_affinity(std::span<const double> t_audio, std::span<const double> t_video,
                                 double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian_affinity: sigma must be positive");
  const std::size_t ta = t_audio.size(), tv = t_video.size();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> log_g(ta * tv), g(ta * tv);
  for (std::size_t i = 0; i < ta; ++i) {
    for (std::size_t j = 0; j < tv; ++j) {
      const double d = t_audio[i] - t_video[j];
      log_g[i * tv + j] = -d * d * inv;
      g[i * tv + j] = std::exp(log_g[i * tv + j]);
    }
  }
  // Targets are normalized in the log domain so narrow kernels cannot
  // underflow a whole row to 0/0.
  std::vector<double> q_a2v(ta * tv), q_v2a(ta * tv);
  for (std::size_t i = 0; i < ta; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < tv; ++j) mx = std::max(mx, log_g[i * tv + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < tv; ++j) s += std::exp(log_g[i * tv + j] - mx);
    for (std::size_t j = 0; j < tv; ++j) q_a2v[i * tv + j] = std::exp(log_g[i * tv + j] - mx) / s;
  }
  for (std::size_t j = 0; j < tv; ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < ta; ++i) mx = std::max(mx, log_g[i * tv + j]);
    double s = 0.0;
    for (std::size_t i = 0; i < ta; ++i) s += std::exp(log_g[i * tv + j] - mx);
    for (std::size_t i = 0; i < ta; ++i) q_v2a[i * tv + j] = std::exp(log_g[i * tv + j] - mx) / s;
  }
  return {Tensor::from({ta, tv}, std::move(g)), Tensor::from({ta, tv}, std::move(q_a2v)),
          Tensor::from({ta, tv}, std::move(q_v2a))};
}

CtmEmbeddings embed_for_ctm(const Tensor& shared_audio, const Tensor& shared_video,
                            const FusionModel& model) {
  CtmEmbeddings e;
  e.raw_audio = model.ctm_audio()(shared_audio);
  e.raw_video = model.ctm_video()(shared_video);
  e.audio = l2_normalize_rows(e.raw_audio);
  e.video = l2_normalize_rows(e.raw_video);
  return e;
}

Tensor ctm_loss(const Tensor& audio_emb, const Tensor& video_emb, const AffinityMatrix& affinity,
                double tau) {
  if (!(tau > 0.0)) throw ConfigError("ctm_loss: tau must be positive");
  const std::size_t ta = audio_emb.rows(), tv = video_emb.rows();
  if (ta == 0 || tv == 0) {
    std::cerr << "warning: ctm_loss on an empty stream (T_a=" << ta << ", T_v=" << tv
              << "); contributing 0\n";
    return Tensor::scalar(0.0);
  }
  if (affinity.g.rows() != ta || affinity.g.cols() != tv) {
    throw ShapeError("ctm_loss: affinity is " + shape_string(affinity.g.shape()) +
                     " for embeddings " + std::to_string(ta) + "x" + std::to_string(tv));
  }
  if (audio_emb.cols() != video_emb.cols()) throw ShapeError("ctm_loss: embedding widths differ");
  const Tensor logits = scale(matmul_nt(audio_emb, video_emb), 1.0 / tau);

  std::vector<double> w_a2v(affinity.q_a2v.data().begin(), affinity.q_a2v.data().end());
  std::vector<double> w_v2a(affinity.q_v2a.data().begin(), affinity.q_v2a.data().end());
  const double ka = -0.5 / static_cast<double>(ta), kv = -0.5 / static_cast<double>(tv);
  for (double& w : w_a2v) w *= ka;
  for (double& w : w_v2a) w *= kv;
  return add(weighted_sum(log_softmax(logits, 1), w_a2v),
             weighted_sum(log_softmax(logits, 0), w_v2a));
}

Tensor total_loss(const Tensor& cls_loss, const Tensor& ctm, double lambda) {
  return add(cls_loss, scale(ctm, lambda));
}

double ctm_entropy_floor(const AffinityMatrix& affinity) {
  const std::size_t ta = affinity.g.rows(), tv = affinity.g.cols();
  if (ta == 0 || tv == 0) return 0.0;
  auto plogp = [](double p) { return p > 0.0 ? p * std::log(p) : 0.0; };
  double h_a2v = 0.0, h_v2a = 0.0;
  for (std::size_t i = 0; i < ta * tv; ++i) {
    h_a2v -= plogp(affinity.q_a2v[i]);
    h_v2a -= plogp(affinity.q_v2a[i]);
  }
  return 0.5 * (h_a2v / static_cast<double>(ta) + h_v2a / static_cast<double>(tv));
}

}  // namespace tarope
