// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "tarope/checkpoint.hpp"
#include "tarope/encoder.hpp"

namespace tarope {
namespace {

using testing::grad_check;
using testing::random_tensor;

constexpr FusionKind kAllFusions[] = {FusionKind::Concat, FusionKind::IsaIsa, FusionKind::IcaIca,
                                      FusionKind::IsaIca, FusionKind::IcaIsa, FusionKind::MsaMsa};
constexpr PosEncKind kAllPosencs[] = {PosEncKind::Sinusoidal, PosEncKind::Learnable,
                                      PosEncKind::Rope, PosEncKind::TaRope};

EncoderConfig tiny(FusionKind f = FusionKind::MsaMsa, PosEncKind p = PosEncKind::TaRope) {
  EncoderConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.n_blocks = 2;
  c.fusion = f;
  c.posenc = p;
  c.n_classes = 3;
  c.d_in_audio = 5;
  c.d_in_video = 4;
  c.d_emb = 4;
  c.dropout = 0.0;
  c.max_tokens = 16;
  return c;
}

EncoderConfig table_scale(FusionKind f) {
  EncoderConfig c;
  c.fusion = f;
  return c;  // defaults: d_model 512, d_ff 2048, 2 blocks, d_in 1024/35
}

FeatureSequence seq(std::mt19937_64& rng, std::size_t t, std::size_t d, double fps, Modality m) {
  return {random_tensor(rng, {t, d}), fps, m};
}

TEST(EncoderConfig, Validation) {
  auto c = tiny();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.n_heads = 8;  // head_dim 1, odd
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny(FusionKind::IsaIca);
  c.n_blocks = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(EncoderConfig, KeyValueRoundTrip) {
  auto c = tiny(FusionKind::IcaIsa, PosEncKind::Learnable);
  c.rates = {48.0, 25.0};
  const auto back = EncoderConfig::from_key_values(c.to_key_values());
  EXPECT_EQ(back.to_key_values(), c.to_key_values());
  EXPECT_EQ(back.fusion, FusionKind::IcaIsa);
  EXPECT_EQ(back.rates.eta_video, 25.0);
}

TEST(FusionNames, RoundTripAndAlias) {
  for (auto f : kAllFusions) EXPECT_EQ(parse_fusion(to_string(f)), f);
  EXPECT_EQ(parse_fusion("msa"), FusionKind::MsaMsa);
  EXPECT_THROW(parse_fusion("msa-isa"), ConfigError);
}

TEST(ProjectInputs, ShapesAtTableScale) {
  FusionModel m(table_scale(FusionKind::MsaMsa), 1);
  std::mt19937_64 rng(1);
  const auto [fa, fv] = m.project_inputs(seq(rng, 100, 1024, 50, Modality::Audio),
                                         seq(rng, 60, 35, 30, Modality::Video));
  EXPECT_EQ(fa.shape(), (Shape{100, 512}));
  EXPECT_EQ(fv.shape(), (Shape{60, 512}));
}

TEST(ProjectInputs, ZeroFramesGiveBiasRows) {
  FusionModel m(tiny(), 2);
  const FeatureSequence a{Tensor::zeros({3, 5}), 50, Modality::Audio};
  const FeatureSequence v{Tensor::zeros({2, 4}), 30, Modality::Video};
  const auto [fa, fv] = m.project_inputs(a, v);
  const auto& ba = m.parameters().get("input.audio.bias");
  const auto& bv = m.parameters().get("input.video.bias");
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(fa.at(r, c), ba[c]);
  }
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(fv.at(1, c), bv[c]);
}

TEST(ProjectInputs, WidthMismatchIsConfigError) {
  FusionModel m(tiny(), 3);
  std::mt19937_64 rng(3);
  EXPECT_THROW(m.project_inputs(seq(rng, 2, 6, 50, Modality::Audio), seq(rng, 2, 4, 30, Modality::Video)),
               ConfigError);
}

TEST(ProjectInputs, GradientMatchesFiniteDifferences) {
  FusionModel m(tiny(), 4);
  std::mt19937_64 rng(4);
  const auto a = seq(rng, 4, 5, 50, Modality::Audio);
  const auto v = seq(rng, 3, 4, 30, Modality::Video);
  const auto w = testing::random_weights(rng, 7 * 8);
  const auto& p = m.parameters();
  auto r = grad_check(
      [&] {
        const auto [fa, fv] = m.project_inputs(a, v);
        const Tensor parts[] = {fa, fv};
        return weighted_sum(concat_rows(parts), w);
      },
      {p.get("input.audio.weight"), p.get("input.audio.bias"), p.get("input.video.weight"),
       p.get("input.video.bias")});
  EXPECT_LT(r.max_rel_err, 1e-5) << r.worst;
}

TEST(Attention, SingleTokenAttendsToItself) {
  for (auto f : {FusionKind::MsaMsa, FusionKind::IsaIsa}) {
    FusionModel m(tiny(f), 5);
    std::mt19937_64 rng(5);
    PaddedSample s{random_tensor(rng, {1, 5}), Tensor::zeros({1, 4}), 1, 0};
    AttentionProbe probe;
    ForwardOptions opts;
    opts.probe = &probe;
    m.forward(s, opts);
    ASSERT_FALSE(probe.records.empty());
    for (const auto& rec : probe.records) {
      if (rec.q_tokens[0].modality != Modality::Audio) continue;
      EXPECT_EQ(rec.weights.at(0, 0), 1.0) << to_string(f) << " " << rec.block;
    }
  }
}

TEST(Attention, WeightRowsSumToOneEverywhere) {
  std::mt19937_64 rng(6);
  const auto a = seq(rng, 5, 5, 50, Modality::Audio);
  const auto v = seq(rng, 3, 4, 30, Modality::Video);
  for (auto f : kAllFusions) {
    if (f == FusionKind::Concat) continue;
    for (auto p : kAllPosencs) {
      FusionModel m(tiny(f, p), 7);
      AttentionProbe probe;
      ForwardOptions opts;
      opts.probe = &probe;
      m.forward(a, v, opts);
      EXPECT_EQ(probe.records.size(), 2u * (f == FusionKind::MsaMsa ? 1 : 2) * 2u);
      for (const auto& rec : probe.records) {
        for (std::size_t i = 0; i < rec.weights.rows(); ++i) {
          double s = 0;
          for (std::size_t j = 0; j < rec.weights.cols(); ++j) s += rec.weights.at(i, j);
          EXPECT_NEAR(s, 1.0, 1e-12) << rec.block << " head " << rec.head;
        }
      }
    }
  }
}

TEST(Attention, MsaCrossModalPathsAreLive) {
  std::mt19937_64 rng(8);
  FusionModel m(tiny(), 9);
  const auto a = seq(rng, 4, 5, 50, Modality::Audio);
  const auto v = seq(rng, 3, 4, 30, Modality::Video);
  const Tensor full = m.forward(a, v).logits;
  ForwardOptions blocked;
  blocked.block_cross_modal = true;
  const Tensor cut = m.forward(a, v, blocked).logits;
  double diff = 0;
  for (std::size_t i = 0; i < full.size(); ++i) diff += std::abs(full[i] - cut[i]);
  EXPECT_GT(diff, 1e-6);
}

TEST(Attention, TaropeLogitsInsideModelAreTimeInvariant) {
  std::mt19937_64 rng(10);
  auto cfg = tiny();
  cfg.n_blocks = 1;
  FusionModel m(cfg, 11);
  const Tensor xa = random_tensor(rng, {11, 5});
  const Tensor xv = random_tensor(rng, {7, 4});
  // Audio 5 / video 3 and audio 10 / video 6 are both at zero time offset;
  // make the paired rows identical so only positions could differ.
  Tensor xa2 = xa.clone();
  Tensor xv2 = xv.clone();
  for (std::size_t c = 0; c < 5; ++c) xa2.mutable_data()[10 * 5 + c] = xa.at(5, c);
  for (std::size_t c = 0; c < 4; ++c) xv2.mutable_data()[6 * 4 + c] = xv.at(3, c);
  AttentionProbe probe2;
  ForwardOptions opts;
  opts.probe = &probe2;
  m.forward(FeatureSequence{xa2, 50, Modality::Audio}, FeatureSequence{xv2, 30, Modality::Video},
            opts);
  for (std::size_t h = 0; h < 2; ++h) {
    const double l1 = probe2.records[h].logits.at(5, 11 + 3);
    const double l2 = probe2.records[h].logits.at(10, 11 + 6);
    EXPECT_NEAR(l1, l2, 1e-9);
  }
}

TEST(Fusion, StackOrderMatters) {
  std::mt19937_64 rng(12);
  FusionModel a(tiny(FusionKind::IsaIca), 13);
  FusionModel b(tiny(FusionKind::IcaIsa), 13);
  b.parameters().restore(a.parameters().snapshot());
  const auto xa = seq(rng, 4, 5, 50, Modality::Audio);
  const auto xv = seq(rng, 3, 4, 30, Modality::Video);
  const Tensor la = a.forward(xa, xv).logits;
  const Tensor lb = b.forward(xa, xv).logits;
  double diff = 0;
  for (std::size_t i = 0; i < la.size(); ++i) diff += std::abs(la[i] - lb[i]);
  EXPECT_GT(diff, 1e-6);
}

TEST(Fusion, MsaTaropeSymmetricInModalitiesForEqualRates) {
  auto cfg = tiny();
  cfg.d_in_video = cfg.d_in_audio;
  cfg.rates = {25, 25};
  FusionModel m(cfg, 14);
  auto& p = m.parameters();
  for (const char* part : {"weight", "bias"}) {
    const Tensor src = p.get(std::string("input.audio.") + part);
    Tensor dst = p.get(std::string("input.video.") + part);
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
  }
  std::mt19937_64 rng(15);
  const Tensor x = random_tensor(rng, {4, 5});
  const Tensor y = random_tensor(rng, {3, 5});
  const Tensor l1 = m.forward(FeatureSequence{x, 25, Modality::Audio},
                              FeatureSequence{y, 25, Modality::Video}).logits;
  const Tensor l2 = m.forward(FeatureSequence{y, 25, Modality::Audio},
                              FeatureSequence{x, 25, Modality::Video}).logits;
  for (std::size_t i = 0; i < l1.size(); ++i) EXPECT_NEAR(l1[i], l2[i], 1e-12);
}

TEST(Pooling, PermutationAndRepetition) {
  std::mt19937_64 rng(16);
  const Tensor a = random_tensor(rng, {5, 8});
  const Tensor v = random_tensor(rng, {3, 8});
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  const Tensor p1 = temporal_average_pool(a, v);
  const Tensor p2 = temporal_average_pool(gather_rows(a, perm), v);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(p1[i], p2[i], 1e-12);

  const Tensor row = slice_rows(a, 0, 1);
  const std::vector<std::size_t> rep(6, 0);
  const Tensor one = temporal_average_pool(row, Tensor::zeros({0, 8}));
  const Tensor many = temporal_average_pool(gather_rows(row, rep), Tensor::zeros({0, 8}));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(one[i], many[i], 1e-15);
}

TEST(Pooling, ConcatFusionIgnoresFrameOrder) {
  FusionModel m(tiny(FusionKind::Concat, PosEncKind::Rope), 17);
  std::mt19937_64 rng(18);
  const Tensor xa = random_tensor(rng, {5, 5});
  const Tensor xv = random_tensor(rng, {3, 4});
  const std::vector<std::size_t> pa = {4, 2, 0, 1, 3}, pv = {2, 0, 1};
  const Tensor l1 = m.forward(FeatureSequence{xa, 50, Modality::Audio},
                              FeatureSequence{xv, 30, Modality::Video}).logits;
  const Tensor l2 = m.forward(FeatureSequence{gather_rows(xa, pa), 50, Modality::Audio},
                              FeatureSequence{gather_rows(xv, pv), 30, Modality::Video}).logits;
  for (std::size_t i = 0; i < l1.size(); ++i) EXPECT_NEAR(l1[i], l2[i], 1e-12);
}

TEST(Classifier, LogitWidthIsClassCount) {
  auto cfg = tiny();
  cfg.n_classes = 6;
  FusionModel m(cfg, 19);
  std::mt19937_64 rng(19);
  const Tensor l = m.forward(seq(rng, 4, 5, 50, Modality::Audio), seq(rng, 3, 4, 30, Modality::Video)).logits;
  EXPECT_EQ(l.shape(), (Shape{1, 6}));
}

TEST(Padding, PaddedForwardMatchesUnpadded) {
  std::mt19937_64 rng(20);
  const auto a = seq(rng, 4, 5, 50, Modality::Audio);
  const auto v = seq(rng, 3, 4, 30, Modality::Video);
  for (auto f : kAllFusions) {
    for (auto p : kAllPosencs) {
      FusionModel m(tiny(f, p), 21);
      const Tensor l1 = m.forward(a, v).logits;
      const Tensor l2 = m.forward(pad_sample(a, v, 7, 6)).logits;
      for (std::size_t i = 0; i < l1.size(); ++i) {
        EXPECT_EQ(l1[i], l2[i]) << (l1[i] - l2[i]) << " " << to_string(f) << "/" << to_string(p);
      }
    }
  }
}

TEST(ParameterCount, TableScaleCounts) {
  const auto msa = expected_parameters(table_scale(FusionKind::MsaMsa)).ablation_count();
  EXPECT_NEAR(static_cast<double>(msa), 6.83e6, 0.05 * 6.83e6);
  std::size_t stacked = 0;
  for (auto f : {FusionKind::IsaIsa, FusionKind::IcaIca, FusionKind::IsaIca, FusionKind::IcaIsa}) {
    const auto n = expected_parameters(table_scale(f)).ablation_count();
    if (stacked == 0) stacked = n;
    EXPECT_EQ(n, stacked) << to_string(f);
  }
  EXPECT_NEAR(static_cast<double>(stacked), 12.61e6, 0.05 * 12.61e6);
  EXPECT_NEAR(static_cast<double>(msa) / static_cast<double>(stacked), 0.54, 0.03);
  EXPECT_LT(expected_parameters(table_scale(FusionKind::Concat)).ablation_count(), msa);
  EXPECT_EQ(expected_parameters(table_scale(FusionKind::Concat)).fusion, 0u);
}

TEST(ParameterCount, ClosedFormMatchesAllocatedTensors) {
  for (auto f : kAllFusions) {
    for (auto p : kAllPosencs) {
      FusionModel m(tiny(f, p), 22);
      const auto expect = expected_parameters(m.config());
      EXPECT_EQ(expect.total(), m.parameters().count()) << to_string(f) << "/" << to_string(p);
      EXPECT_EQ(expect.fusion, m.parameters().count_prefix("fusion."));
      EXPECT_EQ(count_parameters(m), expect.ablation_count());
    }
  }
}

TEST(Gradients, ClassificationLossForEveryVariant) {
  std::mt19937_64 rng(23);
  const auto a = seq(rng, 4, 5, 50, Modality::Audio);
  const auto v = seq(rng, 3, 4, 30, Modality::Video);
  auto check = [&](FusionKind f, PosEncKind p) {
    FusionModel m(tiny(f, p), 24);
    std::vector<Tensor> params;
    for (const auto& e : m.parameters().entries()) {
      if (e.name.rfind("ctm.", 0) != 0) params.push_back(e.tensor);
    }
    auto r = grad_check([&] { return cross_entropy(m.forward(a, v).logits, 1); }, params);
    EXPECT_LT(r.max_rel_err, 1e-4) << to_string(f) << "/" << to_string(p) << ": " << r.worst;
  };
  for (auto f : kAllFusions) check(f, PosEncKind::TaRope);
  for (auto p : kAllPosencs) check(FusionKind::MsaMsa, p);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "tarope_ckpt_test";
  std::filesystem::create_directories(dir);
  FusionModel m(tiny(FusionKind::IcaIsa, PosEncKind::Learnable), 25);
  save_checkpoint(dir / "m.ckpt", m, {{"note", "x"}});
  const auto loaded = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(loaded.metadata.at("note"), "x");
  EXPECT_EQ(loaded.model.config().to_key_values(), m.config().to_key_values());
  const auto& pa = m.parameters().entries();
  const auto& pb = loaded.model.parameters().entries();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    ASSERT_EQ(pa[i].tensor.size(), pb[i].tensor.size());
    for (std::size_t j = 0; j < pa[i].tensor.size(); ++j) {
      EXPECT_EQ(pa[i].tensor[j], pb[i].tensor[j]);
    }
  }
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
  {
    std::ofstream bad(dir / "bad.ckpt");
    bad << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), IoError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace tarope
