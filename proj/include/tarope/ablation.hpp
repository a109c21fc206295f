// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0
//
// Ablation matrices: each cell is a (fusion, positional encoding, CTM on/off)
// setting trained over several seeds.

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tarope/ctm.hpp"
#include "tarope/data.hpp"
#include "tarope/encoder.hpp"
#include "tarope/train.hpp"

namespace tarope {

struct AblationCell {
  FusionKind fusion = FusionKind::MsaMsa;
  PosEncKind posenc = PosEncKind::TaRope;
  bool ctm = true;

  std::string name() const;
};

struct MatrixSpec {
  std::string kind;  // "table2", "table3" or "custom"
  std::vector<FusionKind> fusions;
  std::vector<PosEncKind> posencs;
  std::vector<bool> ctm;
};

/// table2: every fusion with the base posenc and CTM setting.
/// table3: every posenc x {off, on} with the base fusion.
/// custom: the cross product of the given lists. An empty result is an error.
std::vector<AblationCell> expand_matrix(const MatrixSpec& spec, const EncoderConfig& base,
                                        bool base_ctm);

struct CellRun {
  AblationCell cell;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double best_accuracy = 0.0;
  std::size_t best_epoch = 0;
  double final_accuracy = 0.0;
  std::size_t parameters = 0;
};

struct CellSummary {
  AblationCell cell;
  std::size_t parameters = 0;
  std::size_t seeds_ok = 0;
  std::size_t seeds_failed = 0;
  double mean_best = 0.0;
  double mean_final = 0.0;
  double std_final = 0.0;
};

struct AblationResult {
  std::vector<CellRun> runs;
  std::vector<CellSummary> cells;
};

struct AblationOptions {
  EncoderConfig encoder;
  TrainConfig train;
  CtmConfig ctm;  // lambda used for cells with CTM on
  std::vector<std::uint64_t> seeds;
  std::size_t threads = 1;
  std::filesystem::path out_dir;  // empty: no files
  bool keep_checkpoints = false;
  std::function<void(const CellRun&)> on_run;  // called under a lock
};

/// Trains every (cell, seed). A failing run is recorded and the rest continue.
AblationResult run_ablation(const std::vector<AblationCell>& cells, const Dataset& train_set,
                            const Dataset& test_set, const AblationOptions& opts);

void write_ablation_csv(const std::filesystem::path& path, const AblationResult& result);
void write_ablation_runs_csv(const std::filesystem::path& path, const AblationResult& result);

}  // namespace tarope
