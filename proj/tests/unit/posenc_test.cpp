// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gradcheck.hpp"
#include "tarope/ops.hpp"
#include "tarope/posenc.hpp"

namespace tarope {
namespace {

using testing::grad_check;
using testing::random_tensor;

double dot_row(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double s = 0;
  for (std::size_t c = 0; c < a.cols(); ++c) s += a.at(i, c) * b.at(j, c);
  return s;
}

TEST(RotaryBank, FrequenciesDecreaseFromOne) {
  const RotaryBank bank(8, 10000.0);
  const auto w = bank.frequencies();
  ASSERT_EQ(w.size(), 4u);
  EXPECT_EQ(w[0], 1.0);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(w[k], std::pow(10000.0, -2.0 * static_cast<double>(k) / 8.0), 1e-15);
    if (k > 0) {
      EXPECT_LT(w[k], w[k - 1]);
    }
  }
  EXPECT_THROW(RotaryBank(7), ConfigError);
  EXPECT_THROW(RotaryBank::with_frequencies({1.0, 1.0}), ConfigError);
}

TEST(RopeRotate, ZeroPositionIsIdentity) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor(rng, {1, 8});
  const std::vector<double> pos = {0.0};
  const Tensor y = rope_rotate(x, pos, RotaryBank(8));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(RopeRotate, QuarterTurn) {
  const auto bank = RotaryBank::with_frequencies({1.0});
  const std::vector<double> pos = {std::numbers::pi / 2};
  const Tensor y = rope_rotate(Tensor::from({1, 2}, {1, 0}), pos, bank);
  EXPECT_NEAR(y[0], 0.0, 1e-12);
  EXPECT_NEAR(y[1], 1.0, 1e-12);
}

TEST(RopeRotate, PreservesNorm) {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor(rng, {5, 16});
  const std::vector<double> pos = {0, 1.5, 7, 33.25, 100};
  const Tensor y = rope_rotate(x, pos, RotaryBank(8));  // two heads
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(dot_row(y, i, y, i), dot_row(x, i, x, i), 1e-10);
}

TEST(RopeRotate, InnerProductDependsOnlyOnDistance) {
  std::mt19937_64 rng(3);
  const RotaryBank bank(16);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor q = random_tensor(rng, {1, 16});
    const Tensor k = random_tensor(rng, {1, 16});
    const double n = static_cast<double>(rng() % 50), m = static_cast<double>(rng() % 50);
    const double s = static_cast<double>(static_cast<int>(rng() % 200) - 100);
    const std::vector<double> pn = {n}, pm = {m}, pns = {n + s}, pms = {m + s};
    const double base = dot_row(rope_rotate(q, pn, bank), 0, rope_rotate(k, pm, bank), 0);
    const double shifted = dot_row(rope_rotate(q, pns, bank), 0, rope_rotate(k, pms, bank), 0);
    EXPECT_NEAR(base, shifted, 1e-9);
  }
}

TEST(RopeRotate, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor(rng, {3, 8});
  const std::vector<double> pos = {0.5, 2, 9};
  const std::vector<double> w = testing::random_weights(rng, 24);
  auto r = grad_check([&] { return weighted_sum(rope_rotate(x, pos, RotaryBank(8)), w); }, {x});
  EXPECT_LT(r.max_rel_err, 1e-6) << r.worst;
}

TEST(TaropePositions, AudioIsReferenceVideoIsRescaled) {
  const RateSpec rates{50.0, 30.0};
  const std::vector<std::int64_t> a = {10};
  EXPECT_EQ(tarope_positions(Modality::Audio, a, rates)[0], 10.0);
  EXPECT_EQ(tarope_positions(Modality::Audio, a, RateSpec{16000.0, 1.0})[0], 10.0);
  const std::vector<std::int64_t> v = {3, 7};
  const auto p = tarope_positions(Modality::Video, v, rates);
  EXPECT_NEAR(p[0], 5.0, 1e-12);
  EXPECT_NEAR(p[1], 35.0 / 3.0, 1e-12);
}

TEST(TaropePositions, RejectsBadRates) {
  const std::vector<std::int64_t> v = {1};
  EXPECT_THROW(tarope_positions(Modality::Video, v, RateSpec{0.0, 30.0}), ConfigError);
  EXPECT_THROW(tarope_positions(Modality::Video, v, RateSpec{50.0, -1.0}), ConfigError);
}

TEST(Layout, ConcatenatedIndices) {
  const auto t = concatenated_layout(3, 2);
  ASSERT_EQ(t.size(), 5u);
  EXPECT_EQ(t[3].modality, Modality::Video);
  EXPECT_EQ(t[3].frame, 0u);
  EXPECT_EQ(t[3].sequence_index, 3u);
  const auto rope = rotary_positions(PosEncKind::Rope, t, RateSpec{});
  const auto ta = rotary_positions(PosEncKind::TaRope, t, RateSpec{50, 30});
  EXPECT_EQ(rope[4], 4.0);
  EXPECT_NEAR(ta[4], 50.0 / 30.0, 1e-15);
  EXPECT_THROW(rotary_positions(PosEncKind::Sinusoidal, t, RateSpec{}), ConfigError);
}

// Logit between one audio token and one video token after apply_posenc.
double cross_logit(PosEncKind kind, const Tensor& q, const Tensor& k, std::size_t n,
                   std::size_t m, const RateSpec& rates, const RotaryBank& bank) {
  const std::vector<TokenInfo> qt = {{Modality::Audio, n, n}};
  const std::vector<TokenInfo> kt = {{Modality::Video, m, 1000 + m}};
  const auto r = apply_posenc(kind, q, k, qt, kt, rates, bank);
  return dot_row(r.q, 0, r.k, 0);
}

TEST(ApplyPosenc, TaropeCrossModalLogitIsTimeInvariant) {
  std::mt19937_64 rng(5);
  const RotaryBank bank(8);
  const RateSpec rates{50, 30};
  const Tensor q = random_tensor(rng, {1, 8});
  const Tensor k = random_tensor(rng, {1, 8});
  EXPECT_NEAR(cross_logit(PosEncKind::TaRope, q, k, 5, 3, rates, bank),
              cross_logit(PosEncKind::TaRope, q, k, 10, 6, rates, bank), 1e-9);
  // Rope on the concatenated index does not have this property.
  EXPECT_GT(std::abs(cross_logit(PosEncKind::Rope, q, k, 5, 3, rates, bank) -
                     cross_logit(PosEncKind::Rope, q, k, 10, 6, rates, bank)),
            1e-6);
}

TEST(ApplyPosenc, AdditiveVariantsAreNoOps) {
  std::mt19937_64 rng(6);
  const Tensor q = random_tensor(rng, {2, 8});
  const Tensor k = random_tensor(rng, {3, 8});
  const auto qt = concatenated_layout(2, 0);
  const auto kt = concatenated_layout(1, 2);
  for (auto kind : {PosEncKind::Sinusoidal, PosEncKind::Learnable}) {
    const auto r = apply_posenc(kind, q, k, qt, kt, RateSpec{}, RotaryBank(8));
    for (std::size_t i = 0; i < q.size(); ++i) EXPECT_EQ(r.q[i], q[i]);
    for (std::size_t i = 0; i < k.size(); ++i) EXPECT_EQ(r.k[i], k[i]);
  }
}

TEST(ApplyPosenc, RopeAtIndexZeroIsIdentity) {
  std::mt19937_64 rng(7);
  const Tensor q = random_tensor(rng, {1, 8});
  const auto t = concatenated_layout(1, 0);
  const auto r = apply_posenc(PosEncKind::Rope, q, q, t, t, RateSpec{}, RotaryBank(8));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(r.q[i], q[i]);
}

TEST(ApplyPosenc, TaropeEqualsRopeForEqualRatesOnUnimodalLayout) {
  // With equal rates the aligned timeline is the frame index; on a single
  // stream that coincides with the concatenated index.
  std::mt19937_64 rng(8);
  const Tensor q = random_tensor(rng, {6, 8});
  const auto t = concatenated_layout(6, 0);
  const RateSpec eq{25, 25};
  const auto a = apply_posenc(PosEncKind::TaRope, q, q, t, t, eq, RotaryBank(8));
  const auto b = apply_posenc(PosEncKind::Rope, q, q, t, t, eq, RotaryBank(8));
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_EQ(a.q[i], b.q[i]);
}

TEST(ApplyPosenc, TaropeWithEqualRatesIsRopeOnFrameIndices) {
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor(rng, {7, 8});
  const auto t = concatenated_layout(4, 3);
  std::vector<double> frames;
  for (const auto& tok : t) frames.push_back(static_cast<double>(tok.frame));
  const RotaryBank bank(8);
  for (double eta : {1.0, 30.0, 50.0}) {
    const auto a = apply_posenc(PosEncKind::TaRope, x, x, t, t, RateSpec{eta, eta}, bank);
    const Tensor ref = rope_rotate(x, frames, bank);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(a.q[i], ref[i]);
  }
}

TEST(SinusoidalTable, KnownEntries) {
  const Tensor t = sinusoidal_table(4, 6);
  EXPECT_EQ(t.at(0, 0), 0.0);
  EXPECT_EQ(t.at(0, 1), 1.0);
  EXPECT_NEAR(t.at(1, 0), std::sin(1.0), 1e-15);
  EXPECT_NEAR(t.at(1, 1), std::cos(1.0), 1e-15);
  EXPECT_NEAR(t.at(3, 2), std::sin(3.0 * std::pow(10000.0, -2.0 / 6.0)), 1e-15);
}

TEST(Names, RoundTrip) {
  for (auto k : {PosEncKind::Sinusoidal, PosEncKind::Learnable, PosEncKind::Rope,
                 PosEncKind::TaRope}) {
    EXPECT_EQ(parse_posenc(to_string(k)), k);
  }
  EXPECT_THROW(parse_posenc("alibi"), ConfigError);
}

}  // namespace
}  // namespace tarope
