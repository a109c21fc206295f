// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tarope/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace tarope {

// Shortest text that parses back to the same double.
std::string format_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::size_t parse_size(std::string_view key, std::string_view value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

std::uint64_t parse_u64(std::string_view key, std::string_view value) {
  const std::string v(value);
  try {
    if (v.empty() || v.front() == '-') throw std::invalid_argument(v);
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" + v + "'");
  }
}

double parse_double(std::string_view key, std::string_view value) {
  const std::string v(value);
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("'" + std::string(key) + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ConfigError("'" + std::string(key) + "' expects on/off, got '" + std::string(value) + "'");
}

namespace {

template <typename Get, typename Set>
ConfigKey make(std::string key, std::string flag, Section s, std::string help, Get get, Set set) {
  return {std::move(key), std::move(flag), s, std::move(help), std::move(set), std::move(get)};
}

#define SIZE_KEY(K, F, S, H, FIELD)                                                           \
  make(K, F, S, H, [](const RunConfig& c) { return std::to_string(c.FIELD); },              \
       [](RunConfig& c, const std::string& v) { c.FIELD = parse_size(K, v); })
#define U64_KEY(K, F, S, H, FIELD)                                                            \
  make(K, F, S, H, [](const RunConfig& c) { return std::to_string(c.FIELD); },              \
       [](RunConfig& c, const std::string& v) { c.FIELD = parse_u64(K, v); })
#define DOUBLE_KEY(K, F, S, H, FIELD)                                                         \
  make(K, F, S, H, [](const RunConfig& c) { return format_number(c.FIELD); },               \
       [](RunConfig& c, const std::string& v) { c.FIELD = parse_double(K, v); })

std::vector<ConfigKey> build_keys() {
  using S = Section;
  std::vector<ConfigKey> k;
  k.push_back(SIZE_KEY("encoder.d_model", "d-model", S::Encoder, "shared width", encoder.d_model));
  k.push_back(SIZE_KEY("encoder.n_heads", "n-heads", S::Encoder, "attention heads", encoder.n_heads));
  k.push_back(SIZE_KEY("encoder.d_ff", "d-ff", S::Encoder, "feed-forward width", encoder.d_ff));
  k.push_back(SIZE_KEY("encoder.n_blocks", "n-blocks", S::Encoder, "fusion layers", encoder.n_blocks));
  k.push_back(make(
      "encoder.fusion", "fusion", S::Encoder,
      "concat | isa-isa | ica-ica | isa-ica | ica-isa | msa-msa (msa)",
      [](const RunConfig& c) { return std::string(to_string(c.encoder.fusion)); },
      [](RunConfig& c, const std::string& v) { c.encoder.fusion = parse_fusion(v); }));
  k.push_back(make(
      "encoder.posenc", "posenc", S::Encoder, "sinusoidal | learnable | rope | tarope",
      [](const RunConfig& c) { return std::string(to_string(c.encoder.posenc)); },
      [](RunConfig& c, const std::string& v) { c.encoder.posenc = parse_posenc(v); }));
  k.push_back(SIZE_KEY("encoder.d_emb", "d-emb", S::Encoder, "CTM embedding width", encoder.d_emb));
  k.push_back(DOUBLE_KEY("encoder.dropout", "dropout", S::Encoder, "dropout rate", encoder.dropout));
  k.push_back(DOUBLE_KEY("encoder.theta_base", "theta-base", S::Encoder, "rotary base",
                         encoder.theta_base));
  k.push_back(SIZE_KEY("encoder.max_tokens", "max-tokens", S::Encoder,
                       "longest sequence for table encodings", encoder.max_tokens));

  k.push_back(DOUBLE_KEY("ctm.sigma", "sigma", S::Ctm, "affinity width, seconds", ctm.sigma));
  k.push_back(DOUBLE_KEY("ctm.tau", "tau", S::Ctm, "similarity temperature", ctm.tau));
  k.push_back(DOUBLE_KEY("ctm.lambda", "lambda-ctm", S::Ctm, "CTM weight; 0 disables", ctm.lambda));

  k.push_back(SIZE_KEY("train.epochs", "epochs", S::Train, "training epochs", train.epochs));
  k.push_back(SIZE_KEY("train.batch_size", "batch-size", S::Train, "batch size", train.batch_size));
  k.push_back(DOUBLE_KEY("train.lr", "lr", S::Train, "initial learning rate", train.lr));
  k.push_back(DOUBLE_KEY("train.weight_decay", "weight-decay", S::Train, "AdamW decay",
                         train.weight_decay));
  k.push_back(DOUBLE_KEY("train.beta1", "beta1", S::Train, "AdamW beta1", train.beta1));
  k.push_back(DOUBLE_KEY("train.beta2", "beta2", S::Train, "AdamW beta2", train.beta2));
  k.push_back(DOUBLE_KEY("train.eps", "adam-eps", S::Train, "AdamW epsilon", train.eps));
  k.push_back(U64_KEY("train.seed", "seed", S::Train, "training seed", train.seed));
  k.push_back(SIZE_KEY("train.eval_every", "eval-every", S::Train, "epochs between evaluations",
                       train.eval_every));
  k.push_back(SIZE_KEY("train.eval_batch_size", "eval-batch-size", S::Train,
                       "evaluation batch size", train.eval_batch_size));

  k.push_back(SIZE_KEY("data.n_classes", "n-classes", S::Data, "classes", data.n_classes));
  k.push_back(SIZE_KEY("data.train_samples", "train-samples", S::Data, "train clips",
                       data.train_samples));
  k.push_back(SIZE_KEY("data.test_samples", "test-samples", S::Data, "test clips", data.test_samples));
  k.push_back(DOUBLE_KEY("data.duration_min", "duration-min", S::Data, "shortest clip, seconds",
                         data.duration_min));
  k.push_back(DOUBLE_KEY("data.duration_max", "duration-max", S::Data, "longest clip, seconds",
                         data.duration_max));
  k.push_back(DOUBLE_KEY("data.eta_audio", "eta-audio", S::Data, "audio frames per second",
                         data.rates.eta_audio));
  k.push_back(DOUBLE_KEY("data.eta_video", "eta-video", S::Data, "video frames per second",
                         data.rates.eta_video));
  k.push_back(SIZE_KEY("data.d_in_audio", "d-in-audio", S::Data, "audio feature width",
                       data.d_in_audio));
  k.push_back(SIZE_KEY("data.d_in_video", "d-in-video", S::Data, "video feature width",
                       data.d_in_video));
  k.push_back(DOUBLE_KEY("data.noise_std", "noise-std", S::Data, "feature noise", data.noise_std));
  k.push_back(DOUBLE_KEY("data.coincidence_window", "coincidence-window", S::Data,
                         "min gap between non-coincident pairs", data.coincidence_window));
  k.push_back(SIZE_KEY("data.distractors", "distractors", S::Data, "extra events per clip",
                       data.distractors));
  k.push_back(DOUBLE_KEY("data.bump_width", "bump-width", S::Data, "event width, seconds",
                         data.bump_width));
  k.push_back(DOUBLE_KEY("data.event_amplitude", "event-amplitude", S::Data, "event strength",
                         data.event_amplitude));
  k.push_back(DOUBLE_KEY("data.envelope_amplitude", "envelope-amplitude", S::Data,
                         "shared envelope strength", data.envelope_amplitude));
  k.push_back(DOUBLE_KEY("data.phase_amplitude", "phase-amplitude", S::Data,
                         "shared phase strength", data.phase_amplitude));
  k.push_back(U64_KEY("data.seed", "seed", S::Data, "generator seed", data.seed));
  return k;
}

#undef SIZE_KEY
#undef U64_KEY
#undef DOUBLE_KEY

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

const ConfigKey* find_key(std::string_view key) {
  for (const auto& k : config_keys()) {
    if (k.key == key) return &k;
  }
  return nullptr;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text,
                                                                   const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError(where + ": malformed section");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!section.empty()) key = section + "." + key;
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_config_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

void apply_pairs(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::vector<std::string> unknown;
  for (const auto& [k, v] : pairs) {
    if (!find_key(k)) unknown.push_back(k);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  for (const auto& [k, v] : pairs) find_key(k)->set(cfg, v);
}

std::string dump_config(const RunConfig& cfg, unsigned sections) {
  std::map<std::string, std::string> sorted;
  for (const auto& k : config_keys()) {
    if (sections & static_cast<unsigned>(k.section)) sorted[k.key] = k.get(cfg);
  }
  std::string out;
  for (const auto& [k, v] : sorted) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const RunConfig& cfg, unsigned sections, std::string_view extra) {
  std::string text;
  std::istringstream in(dump_config(cfg, sections));
  std::string line;
  while (std::getline(in, line)) {
    if (line.starts_with("train.seed ") || line.starts_with("data.seed ")) continue;
    text += line + "\n";
  }
  text += extra;
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(text);
  return out.str();
}

std::filesystem::path resolve_run_root(const std::optional<std::string>& flag_value) {
  if (flag_value && !flag_value->empty()) return *flag_value;
  if (const char* env = std::getenv(kRunRootEnv); env && *env) return env;
  return "runs";
}

std::filesystem::path run_directory(const std::filesystem::path& root, std::string_view command,
                                    std::string_view hash, std::uint64_t seed) {
  return root / (std::string(command) + "-" + std::string(hash) + "-s" + std::to_string(seed));
}

}  // namespace tarope
