// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0
//
// Temporal-dynamics probes: per-frame feature magnitudes and how often the
// audio and video magnitude curves move in the same direction.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tarope/data.hpp"
#include "tarope/encoder.hpp"

namespace tarope {

struct Series {
  std::vector<double> values;
  std::vector<double> timestamps;  // seconds
};

/// Per-frame L2 norms of `frames`, min-max normalized to [0, 1]. A constant
/// series maps to all zeros.
Series magnitude_trajectory(const Tensor& frames, double fps);

/// Min-max normalization with the same constant-series convention.
std::vector<double> min_max_normalize(std::span<const double> values);

/// Nearest-timestamp pick of `fine` at each of `coarse_times`; ties go to the
/// earlier sample.
std::vector<double> resample_nearest(const Series& fine, std::span<const double> coarse_times);

/// Fraction of consecutive steps on the coarser timeline where both series'
/// first differences share a sign (0 only matches 0). The series with more
/// samples is resampled; on equal counts the video series is kept as is and
/// audio is resampled. Needs >= 2 points in each series.
double sign_agreement(const Series& audio, const Series& video);

enum class FeatureTap { Ctm, Shared };
FeatureTap parse_tap(std::string_view name);
std::string_view to_string(FeatureTap tap);

struct TrajectoryReport {
  std::string sample_id;
  Series audio;
  Series video;
};

TrajectoryReport sample_trajectory(const FusionModel& model, const Sample& sample,
                                   FeatureTap tap = FeatureTap::Ctm);

struct AgreementDistribution {
  std::string model;
  std::vector<std::string> sample_ids;
  std::vector<double> agreement;  // per sample, in [0, 1]
  std::vector<double> bin_edges;  // bins + 1 edges over [0, 1]
  std::vector<double> mass;       // sums to 1
  double mean = 0.0;
  double median = 0.0;
};

/// Histogram over [0, 1] with `bins` equal bins; the last bin is closed.
void fill_histogram(AgreementDistribution& dist, std::size_t bins);

/// Per-sample agreement of one model over a dataset. Samples are processed
/// on `threads` workers; results are ordered by sample index.
AgreementDistribution agreement_distribution(const FusionModel& model, const Dataset& data,
                                             std::string label, FeatureTap tap = FeatureTap::Ctm,
                                             std::size_t bins = 20, std::size_t threads = 1);

struct AgreementReport {
  AgreementDistribution a;
  AgreementDistribution b;
};

/// Loads both checkpoints and compares their agreement distributions.
AgreementReport dataset_agreement_report(const std::filesystem::path& checkpoint_a,
                                         const std::filesystem::path& checkpoint_b,
                                         const Dataset& data, FeatureTap tap = FeatureTap::Ctm,
                                         std::size_t bins = 20, std::size_t threads = 1);

// CSV writers. Trajectory: t, audio_mag, video_mag (video magnitude resampled
// onto the audio timeline by nearest timestamp). Histogram: model, bin_low,
// bin_high, mass. Summary: model, mean, median, n.
void write_trajectory_csv(const std::filesystem::path& path, const TrajectoryReport& report);
void write_histogram_csv(const std::filesystem::path& path,
                         const std::vector<const AgreementDistribution*>& dists);
void write_summary_csv(const std::filesystem::path& path,
                       const std::vector<const AgreementDistribution*>& dists);
void write_agreement_csv(const std::filesystem::path& path,
                         const std::vector<const AgreementDistribution*>& dists);

}  // namespace tarope
