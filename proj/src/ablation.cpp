// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tarope/ablation.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

namespace tarope {

std::string AblationCell::name() const {
  return std::string(to_string(fusion)) + "_" + std::string(to_string(posenc)) +
         (ctm ? "_ctm" : "_noctm");
}

std::vector<AblationCell> expand_matrix(const MatrixSpec& spec, const EncoderConfig& base,
                                        bool base_ctm) {
  std::vector<AblationCell> cells;
  if (spec.kind == "table2") {
    for (FusionKind f : {FusionKind::Concat, FusionKind::IsaIsa, FusionKind::IcaIca,
                         FusionKind::IsaIca, FusionKind::IcaIsa, FusionKind::MsaMsa}) {
      cells.push_back({f, base.posenc, base_ctm});
    }
  } else if (spec.kind == "table3") {
    for (PosEncKind p : {PosEncKind::Sinusoidal, PosEncKind::Learnable, PosEncKind::Rope,
                         PosEncKind::TaRope}) {
      for (bool c : {false, true}) cells.push_back({base.fusion, p, c});
    }
  } else if (spec.kind == "custom") {
    for (FusionKind f : spec.fusions) {
      for (PosEncKind p : spec.posencs) {
        for (bool c : spec.ctm) cells.push_back({f, p, c});
      }
    }
  } else {
    throw ConfigError("unknown matrix '" + spec.kind + "' (expected table2, table3 or custom)");
  }
  if (cells.empty()) throw ConfigError("ablation matrix is empty");
  return cells;
}

AblationResult run_ablation(const std::vector<AblationCell>& cells, const Dataset& train_set,
                            const Dataset& test_set, const AblationOptions& opts) {
  if (cells.empty()) throw ConfigError("ablation matrix is empty");
  if (opts.seeds.empty()) throw ConfigError("ablation needs at least one seed");

  AblationResult result;
  for (const auto& c : cells) {
    for (auto s : opts.seeds) {
      CellRun r;
      r.cell = c;
      r.seed = s;
      result.runs.push_back(r);
    }
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < result.runs.size(); i = next++) {
      CellRun& r = result.runs[i];
      try {
        EncoderConfig ec = opts.encoder;
        ec.fusion = r.cell.fusion;
        ec.posenc = r.cell.posenc;
        if (ec.fusion == FusionKind::IsaIca || ec.fusion == FusionKind::IcaIsa) ec.n_blocks = 2;
        CtmConfig cc = opts.ctm;
        cc.enabled = r.cell.ctm;
        TrainConfig tc = opts.train;
        tc.seed = r.seed;
        if (!opts.out_dir.empty() && opts.keep_checkpoints) {
          tc.checkpoint_dir = opts.out_dir / "cells" / (r.cell.name() + "-s" + std::to_string(r.seed));
        } else {
          tc.checkpoint_dir.clear();
        }
        FusionModel model(ec, r.seed);
        r.parameters = count_parameters(model);
        const TrainRun run = train(model, train_set, &test_set, tc, cc);
        r.best_accuracy = run.best_accuracy;
        r.best_epoch = run.best_epoch;
        r.final_accuracy = run.final_accuracy;
        r.ok = true;
      } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
      }
      if (opts.on_run) {
        std::lock_guard lock(mu);
        opts.on_run(r);
      }
    }
  };
  const std::size_t n = std::clamp<std::size_t>(opts.threads, 1, result.runs.size());
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (const auto& c : cells) {
    CellSummary s;
    s.cell = c;
    std::vector<double> finals;
    for (const auto& r : result.runs) {
      if (r.cell.name() != c.name()) continue;
      if (r.parameters) s.parameters = r.parameters;
      if (!r.ok) {
        ++s.seeds_failed;
        continue;
      }
      ++s.seeds_ok;
      s.mean_best += r.best_accuracy;
      finals.push_back(r.final_accuracy);
    }
    if (s.seeds_ok) {
      s.mean_best /= static_cast<double>(s.seeds_ok);
      for (double f : finals) s.mean_final += f;
      s.mean_final /= static_cast<double>(finals.size());
      for (double f : finals) s.std_final += (f - s.mean_final) * (f - s.mean_final);
      s.std_final = std::sqrt(s.std_final / static_cast<double>(finals.size()));
    }
    if (s.parameters == 0) {
      EncoderConfig ec = opts.encoder;
      ec.fusion = c.fusion;
      ec.posenc = c.posenc;
      try {
        s.parameters = expected_parameters(ec).ablation_count();
      } catch (const std::exception&) {
      }
    }
    result.cells.push_back(s);
  }
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    write_ablation_csv(opts.out_dir / "results.csv", result);
    write_ablation_runs_csv(opts.out_dir / "runs.csv", result);
  }
  return result;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(10);
  return out;
}

}  // namespace

void write_ablation_csv(const std::filesystem::path& path, const AblationResult& result) {
  auto out = open_out(path);
  out << "fusion,posenc,ctm,parameters,parameters_m,seeds_ok,seeds_failed,mean_best_accuracy,"
         "mean_final_accuracy,std_final_accuracy\n";
  for (const auto& s : result.cells) {
    out << to_string(s.cell.fusion) << ',' << to_string(s.cell.posenc) << ','
        << (s.cell.ctm ? "w/" : "w/o") << ',' << s.parameters << ','
        << static_cast<double>(s.parameters) / 1e6 << ',' << s.seeds_ok << ',' << s.seeds_failed
        << ',' << s.mean_best << ',' << s.mean_final << ',' << s.std_final << '\n';
  }
}

void write_ablation_runs_csv(const std::filesystem::path& path, const AblationResult& result) {
  auto out = open_out(path);
  out << "fusion,posenc,ctm,seed,status,best_accuracy,best_epoch,final_accuracy,error\n";
  for (const auto& r : result.runs) {
    std::string err = r.error;
    for (char& ch : err) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    out << to_string(r.cell.fusion) << ',' << to_string(r.cell.posenc) << ','
        << (r.cell.ctm ? "w/" : "w/o") << ',' << r.seed << ',' << (r.ok ? "ok" : "failed") << ','
        << r.best_accuracy << ',' << r.best_epoch << ',' << r.final_accuracy << ',' << err << '\n';
  }
}

}  // namespace tarope
