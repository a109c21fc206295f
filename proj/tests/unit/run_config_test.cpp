// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <set>

#include "tarope/ablation.hpp"
#include "tarope/run_config.hpp"

namespace tarope {
namespace {

unsigned all_sections() {
  return static_cast<unsigned>(Section::Encoder) | static_cast<unsigned>(Section::Ctm) |
         static_cast<unsigned>(Section::Train) | static_cast<unsigned>(Section::Data);
}

TEST(ConfigText, DottedKeysSectionsAndComments) {
  const auto pairs = parse_config_text(
      "# leading comment\n"
      "train.lr = 0.001   # trailing\n"
      "\n"
      "[encoder]\n"
      "fusion = isa-ica\n"
      "  d_model=64\n",
      "test.conf");
  ASSERT_EQ(pairs.size(), 3u);
  EXPECT_EQ(pairs[0], (std::pair<std::string, std::string>{"train.lr", "0.001"}));
  EXPECT_EQ(pairs[1], (std::pair<std::string, std::string>{"encoder.fusion", "isa-ica"}));
  EXPECT_EQ(pairs[2], (std::pair<std::string, std::string>{"encoder.d_model", "64"}));
}

TEST(ConfigText, MalformedAndDuplicateLines) {
  EXPECT_THROW(parse_config_text("train.lr 0.1\n", "x"), ConfigError);
  EXPECT_THROW(parse_config_text("a = 1\na = 2\n", "x"), ConfigError);
  EXPECT_THROW(parse_config_text("[train\nlr = 1\n", "x"), ConfigError);
  EXPECT_THROW(parse_config_text(" = 3\n", "x"), ConfigError);
}

TEST(ApplyPairs, SetsTypedValues) {
  RunConfig cfg;
  apply_pairs(cfg, {{"encoder.fusion", "concat"},
                    {"encoder.posenc", "rope"},
                    {"ctm.lambda", "0"},
                    {"train.epochs", "7"},
                    {"train.lr", "1e-3"},
                    {"data.eta_video", "25"}});
  EXPECT_EQ(cfg.encoder.fusion, FusionKind::Concat);
  EXPECT_EQ(cfg.encoder.posenc, PosEncKind::Rope);
  EXPECT_EQ(cfg.ctm.lambda, 0.0);
  EXPECT_EQ(cfg.train.epochs, 7u);
  EXPECT_EQ(cfg.train.lr, 1e-3);
  EXPECT_EQ(cfg.data.rates.eta_video, 25.0);
}

TEST(ApplyPairs, ReportsEveryUnknownKeyAtOnce) {
  RunConfig cfg;
  try {
    apply_pairs(cfg, {{"train.lrr", "1"}, {"train.epochs", "3"}, {"bogus", "2"}});
    FAIL() << "unknown keys accepted";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("train.lrr"), std::string::npos);
    EXPECT_NE(msg.find("bogus"), std::string::npos);
  }
}

TEST(ApplyPairs, RejectsBadValues) {
  RunConfig cfg;
  EXPECT_THROW(apply_pairs(cfg, {{"train.epochs", "-3"}}), ConfigError);
  EXPECT_THROW(apply_pairs(cfg, {{"train.lr", "fast"}}), ConfigError);
  EXPECT_THROW(apply_pairs(cfg, {{"encoder.fusion", "mlp"}}), ConfigError);
}

TEST(ConfigKeys, UniqueKeysAndDumpRoundTrip) {
  std::set<std::string> keys;
  for (const auto& k : config_keys()) {
    EXPECT_TRUE(keys.insert(k.key).second) << k.key;
    EXPECT_EQ(find_key(k.key), &k);
  }
  EXPECT_EQ(find_key("nope"), nullptr);

  RunConfig cfg;
  apply_pairs(cfg, {{"encoder.d_model", "64"}, {"ctm.tau", "0.1"}, {"data.noise_std", "0.25"}});
  const std::string dump = dump_config(cfg, all_sections());
  RunConfig back;
  apply_pairs(back, parse_config_text(dump, "dump"));
  EXPECT_EQ(dump_config(back, all_sections()), dump);
}

TEST(ConfigHash, StableAndSeedIndependent) {
  RunConfig a, b;
  const unsigned s = all_sections();
  EXPECT_EQ(config_hash(a, s), config_hash(b, s));
  EXPECT_EQ(config_hash(a, s).size(), 16u);
  b.train.seed = 99;
  b.data.seed = 4;
  EXPECT_EQ(config_hash(a, s), config_hash(b, s));
  b.train.lr = 0.5;
  EXPECT_NE(config_hash(a, s), config_hash(b, s));
  EXPECT_NE(config_hash(a, s), config_hash(a, s, "extra"));
  // Sections outside the mask do not contribute.
  RunConfig c;
  c.data.noise_std = 0.9;
  EXPECT_EQ(config_hash(a, static_cast<unsigned>(Section::Train)),
            config_hash(c, static_cast<unsigned>(Section::Train)));
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(RunRoot, FlagBeatsEnvironmentBeatsDefault) {
  ::unsetenv(kRunRootEnv);
  EXPECT_EQ(resolve_run_root(std::nullopt), std::filesystem::path("runs"));
  ::setenv(kRunRootEnv, "/tmp/from_env", 1);
  EXPECT_EQ(resolve_run_root(std::nullopt), std::filesystem::path("/tmp/from_env"));
  EXPECT_EQ(resolve_run_root(std::string("/tmp/flag")), std::filesystem::path("/tmp/flag"));
  ::setenv(kRunRootEnv, "", 1);
  EXPECT_EQ(resolve_run_root(std::nullopt), std::filesystem::path("runs"));
  ::unsetenv(kRunRootEnv);
}

TEST(RunDirectory, ContentAddressed) {
  EXPECT_EQ(run_directory("/r", "train", "00ff", 3), std::filesystem::path("/r/train-00ff-s3"));
}

TEST(ValueParsers, Forms) {
  EXPECT_TRUE(parse_bool("k", "on"));
  EXPECT_TRUE(parse_bool("k", "true"));
  EXPECT_FALSE(parse_bool("k", "0"));
  EXPECT_THROW(parse_bool("k", "maybe"), ConfigError);
  EXPECT_EQ(parse_size("k", "12"), 12u);
  EXPECT_THROW(parse_size("k", "12x"), ConfigError);
  EXPECT_EQ(parse_double("k", "2.5e-3"), 2.5e-3);
  EXPECT_EQ(parse_u64("k", "18446744073709551615"), 18446744073709551615ULL);
  EXPECT_EQ(parse_double("k", format_number(0.1)), 0.1);
  EXPECT_EQ(parse_double("k", format_number(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(AblationMatrix, Expansion) {
  EncoderConfig base;
  const auto t2 = expand_matrix({"table2", {}, {}, {}}, base, true);
  ASSERT_EQ(t2.size(), 6u);
  for (const auto& c : t2) EXPECT_EQ(c.posenc, base.posenc);
  const auto t3 = expand_matrix({"table3", {}, {}, {}}, base, true);
  ASSERT_EQ(t3.size(), 8u);
  std::set<std::string> names;
  for (const auto& c : t3) names.insert(c.name());
  EXPECT_EQ(names.size(), 8u);
  EXPECT_TRUE(names.count("msa-msa_tarope_ctm"));
  EXPECT_TRUE(names.count("msa-msa_sinusoidal_noctm"));

  MatrixSpec custom{"custom", {FusionKind::Concat, FusionKind::MsaMsa}, {PosEncKind::Rope}, {false, true}};
  EXPECT_EQ(expand_matrix(custom, base, true).size(), 4u);
  custom.posencs.clear();
  EXPECT_THROW(expand_matrix(custom, base, true), ConfigError);
  EXPECT_THROW(expand_matrix({"table9", {}, {}, {}}, base, true), ConfigError);
}

}  // namespace
}  // namespace tarope
