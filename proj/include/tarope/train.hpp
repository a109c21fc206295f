// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tarope/ctm.hpp"
#include "tarope/data.hpp"
#include "tarope/encoder.hpp"

namespace tarope {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 4;
  double lr = 5e-5;  // linearly decayed to zero over all steps
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;       // epochs between evaluations
  std::size_t eval_batch_size = 4;
  std::filesystem::path checkpoint_dir;  // empty: keep checkpoints in memory only

  void validate() const;
};

struct AdamWHyper {
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One decoupled-weight-decay Adam update of a single tensor. `step` is the
/// 1-based update count used for bias correction.
void adamw_step(std::span<double> params, std::span<const double> grads, std::span<double> m,
                std::span<double> v, std::size_t step, double lr, const AdamWHyper& hp);

class AdamW {
 public:
  AdamW(ParameterSet& params, AdamWHyper hp);
  /// Applies one update to every parameter using its accumulated gradient.
  void step(double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  ParameterSet& params_;
  AdamWHyper hp_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// lr_init * (1 - step / total_steps) for the 1-based update index `step`,
/// so the last update runs at exactly zero.
double linear_decay_lr(double lr_init, std::size_t step, std::size_t total_steps);

struct StepRecord {
  std::size_t step = 0;  // 1-based
  std::size_t epoch = 0;
  double lr = 0.0;
  double cls_loss = 0.0;
  double ctm_loss = 0.0;
  double total_loss = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;        // rate of the epoch's last update
  double cls_loss = 0.0;  // means over the epoch's steps
  double ctm_loss = 0.0;
  double total_loss = 0.0;
  double train_accuracy = 0.0;
  double eval_accuracy = -1.0;  // -1 when not evaluated
};

struct TrainRun {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_accuracy = -1.0;
  double final_accuracy = -1.0;
  std::vector<std::vector<double>> best_parameters;
  std::filesystem::path best_checkpoint;
  std::filesystem::path final_checkpoint;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct BatchLoss {
  Tensor total;
  double cls = 0.0;
  double ctm = 0.0;
  std::size_t correct = 0;
};

/// Caches Gaussian affinities by (T_a, T_v): timestamps depend only on the
/// lengths and the stream rates.
class AffinityCache {
 public:
  AffinityCache(double sigma, RateSpec rates) : sigma_(sigma), rates_(rates) {}
  const AffinityMatrix& get(std::size_t audio_len, std::size_t video_len);

 private:
  double sigma_;
  RateSpec rates_;
  std::map<std::pair<std::size_t, std::size_t>, AffinityMatrix> cache_;
};

/// Mean classification + CTM loss over a right-padded batch.
BatchLoss batch_loss(const FusionModel& model, std::span<const Sample* const> batch,
                     const CtmConfig& ctm, AffinityCache& affinities, const ForwardOptions& opts);

/// Full training loop. Shuffling, dropout and initialization are driven by
/// cfg.seed only, so identical inputs give bit-identical runs.
TrainRun train(FusionModel& model, const Dataset& train_set, const Dataset* eval_set,
               const TrainConfig& cfg, const CtmConfig& ctm, const TrainHooks& hooks = {});

struct EvalResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

/// Dropout off; padding masked. Empty dataset is an error.
EvalResult evaluate(const FusionModel& model, const Dataset& data, std::size_t batch_size = 4);

std::size_t argmax(std::span<const double> values);

}  // namespace tarope
