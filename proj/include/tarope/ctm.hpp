// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0
//
// Cross-temporal matching loss.
//
// Audio and video frames are embedded on the unit sphere. Their similarity
// matrix S = E_a E_v^T, softened by a temperature, is compared row-wise
// (audio -> video) and column-wise (video -> audio) against targets built
// from a Gaussian kernel on the frame timestamps:
//
//   g_ij  = exp(-(t_i^a - t_j^v)^2 / (2 sigma^2))
//   L_a2v = -(1/T_a) sum_i sum_j q^{a2v}_ij log p^{a2v}_ij
//   L_v2a = -(1/T_v) sum_j sum_i q^{v2a}_ij log p^{v2a}_ij
//   L     = (L_a2v + L_v2a) / 2
//
// The training objective is L_cls + lambda * L.

#pragma once

#include <span>
#include <vector>

#include "tarope/encoder.hpp"
#include "tarope/tensor.hpp"

namespace tarope {

struct CtmConfig {
  double sigma = 0.5;   // seconds
  double tau = 0.07;
  double lambda = 0.5;
  bool enabled = true;  // false skips the CTM branch entirely

  void validate() const;
};

/// Temporal affinities and the two target distributions derived from them.
struct AffinityMatrix {
  Tensor g;      // [T_a x T_v], entries in (0, 1]
  Tensor q_a2v;  // rows sum to 1
  Tensor q_v2a;  // columns sum to 1
};

AffinityMatrix gaussian_affinity(std::span<const double> t_audio, std::span<const double> t_video,
                                 double sigma);

struct CtmEmbeddings {
  Tensor audio;      // unit rows [T_a x d_emb]
  Tensor video;      // unit rows [T_v x d_emb]
  Tensor raw_audio;  // projections before normalization
  Tensor raw_video;
};

/// Projects shared-space features with the model's CTM head and normalizes
/// every row to unit length (eps-guarded for zero rows).
CtmEmbeddings embed_for_ctm(const Tensor& shared_audio, const Tensor& shared_video,
                            const FusionModel& model);

/// Bidirectional soft cross-entropy between temperature-softmaxed
/// similarities and the affinity targets. Returns 0 (with a warning on
/// stderr) when either stream is empty.
Tensor ctm_loss(const Tensor& audio_emb, const Tensor& video_emb, const AffinityMatrix& affinity,
                double tau);

/// L_cls + lambda * L_ctm.
Tensor total_loss(const Tensor& cls_loss, const Tensor& ctm, double lambda);

/// Lower bound of ctm_loss over all embeddings: the mean target entropies,
/// reached exactly when the predicted distributions equal the targets.
double ctm_entropy_floor(const AffinityMatrix& affinity);

}  // namespace tarope
