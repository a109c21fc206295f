// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "tarope/analyze.hpp"
#include "tarope/checkpoint.hpp"

namespace tarope {
namespace {

namespace fs = std::filesystem;

Series sampled(double fps, double seconds, double (*f)(double)) {
  Series s;
  const auto n = static_cast<std::size_t>(seconds * fps);
  s.timestamps = FeatureSequence::frame_timestamps(n, fps);
  for (double t : s.timestamps) s.values.push_back(f(t));
  return s;
}

double sine(double t) { return std::sin(2 * std::numbers::pi * t); }
double ramp(double t) { return 3 * t + 1; }
double neg_ramp(double t) { return -3 * t; }

TEST(MinMax, Conventions) {
  const std::vector<double> v = {1, 3, 2};
  EXPECT_EQ(min_max_normalize(v), (std::vector<double>{0, 1, 0.5}));
  const std::vector<double> c = {4, 4, 4};
  EXPECT_EQ(min_max_normalize(c), (std::vector<double>{0, 0, 0}));
  EXPECT_TRUE(min_max_normalize(std::vector<double>{}).empty());
}

TEST(MagnitudeTrajectory, NormsAndTimestamps) {
  const Tensor f = Tensor::from({3, 2}, {1, 0, 0, 3, 2, 0});
  const auto s = magnitude_trajectory(f, 50);
  EXPECT_EQ(s.values, (std::vector<double>{0, 1, 0.5}));
  EXPECT_EQ(s.timestamps, (std::vector<double>{0, 0.02, 0.04}));

  const Tensor c = Tensor::from({3, 2}, {3, 4, 0, 5, 5, 0});
  for (double v : magnitude_trajectory(c, 30).values) EXPECT_EQ(v, 0.0);

  std::vector<double> r;
  for (int i = 0; i < 6; ++i) r.push_back(2.0 + i);
  const auto lin = magnitude_trajectory(Tensor::from({6, 1}, r), 10);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(lin.values[i], i / 5.0, 1e-15);
  EXPECT_THROW(magnitude_trajectory(f, 0.0), ConfigError);
}

TEST(Resample, NearestWithTiesToEarlier) {
  Series fine{{10, 20, 30}, {0.0, 1.0, 2.0}};
  const std::vector<double> at = {-1, 0.5, 0.51, 1.49, 5};
  EXPECT_EQ(resample_nearest(fine, at), (std::vector<double>{10, 10, 20, 20, 30}));
}

TEST(SignAgreement, Examples) {
  const auto a = sampled(50, 2, sine);
  EXPECT_EQ(sign_agreement(a, a), 1.0);
  EXPECT_EQ(sign_agreement(sampled(50, 2, ramp), sampled(50, 2, neg_ramp)), 0.0);
  const double cross_rate = sign_agreement(sampled(50, 2, sine), sampled(30, 2, sine));
  EXPECT_GE(cross_rate, 0.9);
  EXPECT_LE(cross_rate, 1.0);
  EXPECT_EQ(sign_agreement(sampled(30, 2, sine), sampled(50, 2, sine)), cross_rate);
}

TEST(SignAgreement, NeedsTwoPoints) {
  const Series one{{1.0}, {0.0}};
  EXPECT_THROW(sign_agreement(one, one), ContractError);
}

TEST(Histogram, MassSumsToOneAndClosedLastBin) {
  AgreementDistribution d;
  d.agreement = {0.0, 0.1, 0.5, 0.95, 1.0, 1.0, 0.33};
  fill_histogram(d, 10);
  double total = 0;
  for (double m : d.mass) total += m;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(d.mass[9], 3.0 / 7.0, 1e-15);
  EXPECT_NEAR(d.mass[0], 1.0 / 7.0, 1e-15);
  EXPECT_EQ(d.bin_edges.front(), 0.0);
  EXPECT_EQ(d.bin_edges.back(), 1.0);
  EXPECT_NEAR(d.median, 0.5, 1e-15);
  EXPECT_THROW(fill_histogram(d, 0), ConfigError);
}

class DatasetAgreement : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / "tarope_analyze_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    SyntheticSpec spec;
    spec.n_classes = 4;
    spec.train_samples = 0;
    spec.test_samples = 9;
    spec.duration_min = 0.8;
    spec.duration_max = 1.0;
    spec.d_in_audio = 12;
    spec.d_in_video = 10;
    data_ = generate_synthetic(spec);
    EncoderConfig ec;
    ec.d_model = 8;
    ec.n_heads = 2;
    ec.d_ff = 16;
    ec.d_emb = 4;
    ec.n_classes = 4;
    ec.d_in_audio = 12;
    ec.d_in_video = 10;
    save_checkpoint(dir_ / "a.ckpt", FusionModel(ec, 1));
    save_checkpoint(dir_ / "b.ckpt", FusionModel(ec, 2));
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_;
  Dataset data_;
};

TEST_F(DatasetAgreement, SameCheckpointGivesIdenticalDistributions) {
  const auto r = dataset_agreement_report(dir_ / "a.ckpt", dir_ / "a.ckpt", data_, FeatureTap::Ctm, 20, 1);
  EXPECT_EQ(r.a.agreement, r.b.agreement);
  EXPECT_EQ(r.a.mass, r.b.mass);
  for (double x : r.a.agreement) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
  }
  double total = 0;
  for (double m : r.a.mass) total += m;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST_F(DatasetAgreement, ThreadCountDoesNotChangeResults) {
  const auto one = dataset_agreement_report(dir_ / "a.ckpt", dir_ / "b.ckpt", data_, FeatureTap::Shared, 10, 1);
  const auto many = dataset_agreement_report(dir_ / "a.ckpt", dir_ / "b.ckpt", data_, FeatureTap::Shared, 10, 4);
  EXPECT_EQ(one.a.agreement, many.a.agreement);
  EXPECT_EQ(one.b.agreement, many.b.agreement);
}

TEST_F(DatasetAgreement, MissingCheckpointIsIoError) {
  EXPECT_THROW(dataset_agreement_report(dir_ / "a.ckpt", dir_ / "nope.ckpt", data_, FeatureTap::Ctm, 10, 1),
               IoError);
}

TEST_F(DatasetAgreement, CsvOutputs) {
  const auto r = dataset_agreement_report(dir_ / "a.ckpt", dir_ / "b.ckpt", data_, FeatureTap::Ctm, 5, 1);
  write_histogram_csv(dir_ / "hist.csv", {&r.a, &r.b});
  write_summary_csv(dir_ / "summary.csv", {&r.a, &r.b});
  const auto loaded = load_checkpoint(dir_ / "a.ckpt");
  const auto tr = sample_trajectory(loaded.model, data_[0], FeatureTap::Ctm);
  write_trajectory_csv(dir_ / "traj.csv", tr);

  std::ifstream hist(dir_ / "hist.csv");
  std::string line;
  std::getline(hist, line);
  EXPECT_EQ(line, "model,bin_low,bin_high,mass");
  std::size_t rows = 0;
  while (std::getline(hist, line)) ++rows;
  EXPECT_EQ(rows, 10u);

  std::ifstream traj(dir_ / "traj.csv");
  std::getline(traj, line);
  EXPECT_EQ(line, "t,audio_mag,video_mag");
  rows = 0;
  while (std::getline(traj, line)) ++rows;
  EXPECT_EQ(rows, data_[0].audio.length());
}

TEST(FeatureTapNames, RoundTrip) {
  EXPECT_EQ(parse_tap("ctm"), FeatureTap::Ctm);
  EXPECT_EQ(parse_tap(to_string(FeatureTap::Shared)), FeatureTap::Shared);
  EXPECT_THROW(parse_tap("encoded"), ConfigError);
}

}  // namespace
}  // namespace tarope
