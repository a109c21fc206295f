// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0
//
// tarope: gen-data | train | eval | ablate | analyze
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <unistd.h>

#include "tarope/ablation.hpp"
#include "tarope/analyze.hpp"
#include "tarope/checkpoint.hpp"
#include "tarope/run_config.hpp"

namespace fs = std::filesystem;
using namespace tarope;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr unsigned bits(Section s) { return static_cast<unsigned>(s); }

// Config-key flags of one subcommand plus the optional --config file.
struct KeyFlags {
  unsigned sections = 0;
  std::string config_file;
  std::map<std::string, std::string> values;  // key -> raw flag value
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& app, unsigned secs) {
    sections = secs;
    app.add_option("--config", config_file, "key = value config file; flags override it");
    for (const auto& k : config_keys()) {
      if (!(secs & bits(k.section))) continue;
      options[k.key] = app.add_option("--" + k.flag, values[k.key], k.help + " [" + k.key + "]");
    }
  }

  RunConfig resolve(RunConfig cfg) const {
    if (!config_file.empty()) apply_pairs(cfg, read_config_file(config_file));
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) pairs.emplace_back(key, values.at(key));
    }
    apply_pairs(cfg, pairs);
    return cfg;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

fs::path absolute_data_dir(const std::string& dir) {
  if (dir.empty()) throw UsageError("--data-dir is required");
  const fs::path p = fs::absolute(dir).lexically_normal();
  if (!fs::exists(p / "manifest.tsv")) {
    throw IoError("data directory " + p.string() + " has no manifest.tsv");
  }
  return p;
}

// Encoder input widths, class count and frame rates come from the data.
void bind_to_data(EncoderConfig& ec, const Dataset& train_set, const Dataset& eval_set,
                  const fs::path& data_dir) {
  if (train_set.empty()) throw IoError("no training samples in " + data_dir.string());
  const Sample& first = train_set.front();
  ec.d_in_audio = first.audio.dim();
  ec.d_in_video = first.video.dim();
  ec.rates = {first.audio.fps, first.video.fps};
  std::size_t max_label = 0;
  for (const Dataset* ds : {&train_set, &eval_set}) {
    for (const auto& s : *ds) {
      if (s.audio.fps != ec.rates.eta_audio || s.video.fps != ec.rates.eta_video) {
        throw IoError(s.id + ": frame rates differ from the rest of the dataset");
      }
      max_label = std::max(max_label, s.label);
    }
  }
  ec.n_classes = max_label + 1;
  if (fs::exists(data_dir / "dataset.conf")) {
    for (const auto& [k, v] : read_config_file(data_dir / "dataset.conf")) {
      if (k == "data.n_classes") ec.n_classes = std::max(ec.n_classes, parse_size(k, v));
    }
  }
  ec.validate();
}

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// ---------------------------------------------------------------- gen-data

int cmd_gen_data(const KeyFlags& flags, const std::string& out_dir) {
  if (out_dir.empty()) throw UsageError("gen-data: --out is required");
  const RunConfig cfg = flags.resolve({});
  cfg.data.validate();
  const Dataset data = generate_synthetic(cfg.data);

  const fs::path out = fs::absolute(out_dir).lexically_normal();
  const fs::path tmp = out.parent_path() / ("." + out.filename().string() + ".tmp-" +
                                            std::to_string(::getpid()));
  try {
    fs::remove_all(tmp);
    write_dataset(tmp, data, cfg.data.to_key_values());
    if (fs::exists(out)) fs::remove_all(out);
    fs::rename(tmp, out);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
  std::cout << "wrote " << data.size() << " clips (" << cfg.data.train_samples << " train, "
            << cfg.data.test_samples << " test) to " << out.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data_dir;
  std::string eval_split = "test";
  std::optional<std::string> run_root;
};

int cmd_train(const KeyFlags& flags, const TrainArgs& args) {
  RunConfig cfg = flags.resolve({});
  const fs::path data_dir = absolute_data_dir(args.data_dir);
  const Dataset train_set = load_dataset(data_dir, "train");
  const Dataset eval_set = args.eval_split.empty() ? Dataset{} : load_dataset(data_dir, args.eval_split);
  bind_to_data(cfg.encoder, train_set, eval_set, data_dir);
  cfg.ctm.validate();
  cfg.train.validate();

  const unsigned secs = bits(Section::Encoder) | bits(Section::Ctm) | bits(Section::Train);
  const std::string data_line = "data_dir = " + data_dir.string() + "\neval_split = " + args.eval_split + "\n";
  const std::string hash = config_hash(cfg, secs, data_line);
  const fs::path run_dir = run_directory(resolve_run_root(args.run_root), "train", hash, cfg.train.seed);
  fs::create_directories(run_dir);
  write_text(run_dir / "config.resolved", dump_config(cfg, secs) + data_line);

  std::ofstream log(run_dir / "log.jsonl", std::ios::trunc);
  std::ofstream metrics(run_dir / "metrics.csv", std::ios::trunc);
  metrics.precision(10);
  metrics << "epoch,lr,cls_loss,ctm_loss,total,accuracy,train_accuracy\n";
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& s) {
    nlohmann::json j{{"event", "step"}, {"step", s.step}, {"epoch", s.epoch}, {"lr", s.lr},
                     {"cls_loss", s.cls_loss}, {"ctm_loss", s.ctm_loss}, {"total", s.total_loss}};
    log << j.dump() << "\n";
  };
  hooks.on_epoch = [&](const EpochRecord& e) {
    nlohmann::json j{{"event", "epoch"},       {"time", now_iso()},
                     {"epoch", e.epoch},       {"lr", e.lr},
                     {"cls_loss", e.cls_loss}, {"ctm_loss", e.ctm_loss},
                     {"total", e.total_loss},  {"train_accuracy", e.train_accuracy},
                     {"accuracy", e.eval_accuracy}};
    log << j.dump() << std::endl;
    metrics << e.epoch << ',' << e.lr << ',' << e.cls_loss << ',' << e.ctm_loss << ','
            << e.total_loss << ',' << e.eval_accuracy << ',' << e.train_accuracy << std::endl;
    std::cout << "epoch " << e.epoch << "  loss " << e.total_loss << "  train_acc "
              << e.train_accuracy;
    if (e.eval_accuracy >= 0.0) std::cout << "  acc " << e.eval_accuracy;
    std::cout << std::endl;
  };

  cfg.train.checkpoint_dir = run_dir;
  FusionModel model(cfg.encoder, cfg.train.seed);
  const TrainRun run =
      train(model, train_set, eval_set.empty() ? nullptr : &eval_set, cfg.train, cfg.ctm, hooks);

  nlohmann::json summary{{"run_dir", run_dir.string()},
                         {"best_epoch", run.best_epoch},
                         {"best_accuracy", run.best_accuracy},
                         {"final_accuracy", run.final_accuracy},
                         {"parameters", count_parameters(model)},
                         {"parameters_total", model.parameters().count()},
                         {"best_checkpoint", run.best_checkpoint.string()},
                         {"final_checkpoint", run.final_checkpoint.string()}};
  write_text(run_dir / "summary.json", summary.dump(2) + "\n");
  std::cout << "run directory: " << run_dir.string() << "\n"
            << "best accuracy " << run.best_accuracy << " (epoch " << run.best_epoch
            << "), final accuracy " << run.final_accuracy << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string split = "test";
  std::size_t batch_size = 4;
  std::string json_out;
};

int cmd_eval(const EvalArgs& args) {
  const fs::path data_dir = absolute_data_dir(args.data_dir);
  if (!fs::exists(args.checkpoint)) throw IoError("checkpoint not found: " + args.checkpoint);
  const auto ck = load_checkpoint(args.checkpoint);
  const auto& ec = ck.model.config();
  const Dataset data = load_dataset(data_dir, args.split, {ec.n_classes, ec.d_in_audio, ec.d_in_video});
  if (data.empty()) throw IoError("split '" + args.split + "' is empty in " + data_dir.string());
  const EvalResult r = evaluate(ck.model, data, args.batch_size);
  std::cout << "accuracy " << r.accuracy << " (" << r.correct << "/" << r.total << ")\n";
  std::cout << "confusion (rows: true, cols: predicted)\n";
  for (const auto& row : r.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) std::cout << (j ? "\t" : "") << row[j];
    std::cout << "\n";
  }
  if (!args.json_out.empty()) {
    nlohmann::json j{{"accuracy", r.accuracy}, {"correct", r.correct}, {"total", r.total},
                     {"confusion", r.confusion}, {"split", args.split}};
    write_text(args.json_out, j.dump(2) + "\n");
  }
  return kExitOk;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  std::string data_dir;
  std::string matrix = "table3";
  std::vector<std::string> fusions, posencs, ctm;
  std::size_t seeds = 3;
  std::size_t threads = 1;
  bool keep_checkpoints = false;
  std::optional<std::string> run_root;
};

int cmd_ablate(const KeyFlags& flags, const AblateArgs& args) {
  RunConfig cfg = flags.resolve({});
  MatrixSpec spec;
  spec.kind = args.matrix;
  for (const auto& f : args.fusions) spec.fusions.push_back(parse_fusion(f));
  for (const auto& p : args.posencs) spec.posencs.push_back(parse_posenc(p));
  for (const auto& c : args.ctm) spec.ctm.push_back(parse_bool("--ctm", c));
  if (args.seeds == 0) throw UsageError("ablate: --seeds must be at least 1");
  const bool base_ctm = cfg.ctm.lambda != 0.0;
  const auto cells = expand_matrix(spec, cfg.encoder, base_ctm);  // throws before any write

  const fs::path data_dir = absolute_data_dir(args.data_dir);
  const Dataset train_set = load_dataset(data_dir, "train");
  const Dataset test_set = load_dataset(data_dir, "test");
  if (test_set.empty()) throw IoError("ablate needs a non-empty test split");
  bind_to_data(cfg.encoder, train_set, test_set, data_dir);
  cfg.ctm.validate();
  cfg.train.validate();
  if (cfg.ctm.lambda == 0.0 && std::any_of(cells.begin(), cells.end(), [](auto& c) { return c.ctm; })) {
    cfg.ctm.lambda = CtmConfig{}.lambda;  // CTM-on cells need a positive weight
  }

  std::string cell_text = "data_dir = " + data_dir.string() + "\nmatrix =";
  for (const auto& c : cells) cell_text += " " + c.name();
  cell_text += "\nseeds = " + std::to_string(args.seeds) + "\n";
  const unsigned secs = bits(Section::Encoder) | bits(Section::Ctm) | bits(Section::Train);
  const std::string hash = config_hash(cfg, secs, cell_text);
  const fs::path run_dir = run_directory(resolve_run_root(args.run_root), "ablate", hash, cfg.train.seed);
  fs::create_directories(run_dir);
  write_text(run_dir / "config.resolved", dump_config(cfg, secs) + cell_text);

  AblationOptions opts;
  opts.encoder = cfg.encoder;
  opts.train = cfg.train;
  opts.ctm = cfg.ctm;
  for (std::size_t i = 0; i < args.seeds; ++i) opts.seeds.push_back(cfg.train.seed + i);
  opts.threads = args.threads;
  opts.out_dir = run_dir;
  opts.keep_checkpoints = args.keep_checkpoints;
  opts.on_run = [](const CellRun& r) {
    std::cout << r.cell.name() << " seed " << r.seed << ": "
              << (r.ok ? "final " + std::to_string(r.final_accuracy) + " best " +
                             std::to_string(r.best_accuracy)
                       : "FAILED " + r.error)
              << std::endl;
  };
  const AblationResult result = run_ablation(cells, train_set, test_set, opts);

  std::cout << "\nfusion\tposenc\tctm\tparams(M)\tmean_final\tmean_best\n";
  std::size_t failed = 0;
  for (const auto& s : result.cells) {
    failed += s.seeds_failed;
    std::printf("%s\t%s\t%s\t%.2f\t%.4f\t%.4f\n", std::string(to_string(s.cell.fusion)).c_str(),
                std::string(to_string(s.cell.posenc)).c_str(), s.cell.ctm ? "w/" : "w/o",
                static_cast<double>(s.parameters) / 1e6, s.mean_final, s.mean_best);
  }
  std::cout << "results: " << (run_dir / "results.csv").string() << "\n";
  if (failed) {
    std::cerr << failed << " run(s) failed; see runs.csv\n";
    return kExitRuntime;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
  std::string data_dir;
  std::vector<std::string> checkpoints;
  std::string split = "test";
  std::string tap = "ctm";
  std::size_t bins = 20;
  std::size_t trajectories = 3;
  std::size_t threads = 1;
  std::string out;
  std::optional<std::string> run_root;
};

int cmd_analyze(const AnalyzeArgs& args) {
  if (args.checkpoints.empty() || args.checkpoints.size() > 2) {
    throw UsageError("analyze: pass one or two --checkpoint values");
  }
  const FeatureTap tap = parse_tap(args.tap);
  // Data first: a missing dataset fails before any checkpoint is read.
  const fs::path data_dir = absolute_data_dir(args.data_dir);
  const Dataset data = load_dataset(data_dir, args.split);
  if (data.empty()) throw IoError("split '" + args.split + "' is empty in " + data_dir.string());
  for (const auto& c : args.checkpoints) {
    if (!fs::exists(c)) throw IoError("checkpoint not found: " + c);
  }

  fs::path out_dir = args.out;
  if (out_dir.empty()) {
    std::string key = "data_dir = " + data_dir.string() + "\nsplit = " + args.split +
                      "\ntap = " + args.tap + "\nbins = " + std::to_string(args.bins) + "\n";
    for (const auto& c : args.checkpoints) key += "checkpoint = " + fs::absolute(c).string() + "\n";
    std::ostringstream hex;
    hex << std::hex << fnv1a64(key);
    out_dir = run_directory(resolve_run_root(args.run_root), "analyze", hex.str(), 0);
  }
  fs::create_directories(out_dir);

  std::vector<LoadedCheckpoint> models;
  for (const auto& c : args.checkpoints) models.push_back(load_checkpoint(c));
  const char* labels[2] = {"A", "B"};
  const std::size_t n_traj = std::min(args.trajectories, data.size());
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (std::size_t i = 0; i < n_traj; ++i) {
      const auto report = sample_trajectory(models[m].model, data[i], tap);
      write_trajectory_csv(out_dir / "trajectories" / (std::string(labels[m]) + "_" + data[i].id + ".csv"),
                           report);
    }
  }
  std::cout << "trajectories: " << (out_dir / "trajectories").string() << "\n";
  if (models.size() == 2) {
    const auto a = agreement_distribution(models[0].model, data, "A", tap, args.bins, args.threads);
    const auto b = agreement_distribution(models[1].model, data, "B", tap, args.bins, args.threads);
    write_histogram_csv(out_dir / "agreement_histogram.csv", {&a, &b});
    write_summary_csv(out_dir / "agreement_summary.csv", {&a, &b});
    write_agreement_csv(out_dir / "agreement_samples.csv", {&a, &b});
    std::printf("model A (%s): mean %.4f median %.4f n %zu\n", args.checkpoints[0].c_str(), a.mean,
                a.median, a.agreement.size());
    std::printf("model B (%s): mean %.4f median %.4f n %zu\n", args.checkpoints[1].c_str(), b.mean,
                b.median, b.agreement.size());
  }
  std::cout << "output: " << out_dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tarope: temporally aligned audio-visual fusion experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "tarope 0.1.0");

  KeyFlags gen_flags, train_flags, ablate_flags;
  std::string gen_out;
  TrainArgs train_args;
  EvalArgs eval_args;
  AblateArgs ablate_args;
  AnalyzeArgs analyze_args;
  const unsigned model_secs = bits(Section::Encoder) | bits(Section::Ctm) | bits(Section::Train);

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic alignment dataset");
  gen_flags.attach(*gen, bits(Section::Data));
  gen->add_option("--out", gen_out, "output directory");

  auto* tr = app.add_subcommand("train", "train one model");
  train_flags.attach(*tr, model_secs);
  tr->add_option("--data-dir", train_args.data_dir, "dataset directory (manifest paths are relative to it)");
  tr->add_option("--eval-split", train_args.eval_split, "split used for checkpoint selection ('' for none)");
  tr->add_option("--run-root", train_args.run_root, std::string("run root (default $") + kRunRootEnv + " or ./runs)");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  ev->add_option("--data-dir", eval_args.data_dir, "dataset directory")->required();
  ev->add_option("--split", eval_args.split, "split to evaluate");
  ev->add_option("--batch-size", eval_args.batch_size, "evaluation batch size");
  ev->add_option("--json", eval_args.json_out, "also write results as JSON");

  auto* ab = app.add_subcommand("ablate", "run an ablation matrix");
  ablate_flags.attach(*ab, model_secs);
  ab->add_option("--data-dir", ablate_args.data_dir, "dataset directory");
  ab->add_option("--matrix", ablate_args.matrix, "table2 | table3 | custom");
  ab->add_option("--fusions", ablate_args.fusions, "custom matrix fusion list")->delimiter(',');
  ab->add_option("--posencs", ablate_args.posencs, "custom matrix positional encodings")->delimiter(',');
  ab->add_option("--ctm", ablate_args.ctm, "custom matrix CTM settings (on,off)")->delimiter(',');
  ab->add_option("--seeds", ablate_args.seeds, "seeds per cell, counting up from --seed");
  ab->add_option("--threads", ablate_args.threads, "cells trained in parallel");
  ab->add_flag("--keep-checkpoints", ablate_args.keep_checkpoints, "keep per-run checkpoints");
  ab->add_option("--run-root", ablate_args.run_root, "run root");

  auto* an = app.add_subcommand("analyze", "feature-magnitude dynamics of one or two checkpoints");
  an->add_option("--data-dir", analyze_args.data_dir, "dataset directory");
  an->add_option("--checkpoint", analyze_args.checkpoints, "checkpoint (give twice to compare)");
  an->add_option("--split", analyze_args.split, "split to analyze");
  an->add_option("--tap", analyze_args.tap, "ctm | shared");
  an->add_option("--bins", analyze_args.bins, "histogram bins");
  an->add_option("--trajectories", analyze_args.trajectories, "samples with trajectory CSVs");
  an->add_option("--threads", analyze_args.threads, "worker threads");
  an->add_option("--out", analyze_args.out, "output directory (default: under the run root)");
  an->add_option("--run-root", analyze_args.run_root, "run root");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gen_flags, gen_out);
    if (*tr) return cmd_train(train_flags, train_args);
    if (*ev) return cmd_eval(eval_args);
    if (*ab) return cmd_ablate(ablate_flags, ablate_args);
    if (*an) return cmd_analyze(analyze_args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
