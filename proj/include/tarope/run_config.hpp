// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0
//
// Resolved run configuration: defaults <- config file <- command-line flags.
//
// Config files hold `key = value` lines. Keys are dotted (`train.lr`), or a
// `[train]` header prefixes the keys that follow it. '#' starts a comment.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tarope/ctm.hpp"
#include "tarope/data.hpp"
#include "tarope/encoder.hpp"
#include "tarope/train.hpp"

namespace tarope {

inline constexpr const char* kRunRootEnv = "TAROPE_RUN_ROOT";

enum class Section : unsigned { Encoder = 1, Ctm = 2, Train = 4, Data = 8 };

struct RunConfig {
  EncoderConfig encoder;
  CtmConfig ctm;
  TrainConfig train;
  SyntheticSpec data;
};

struct ConfigKey {
  std::string key;   // dotted name, e.g. "train.lr"
  std::string flag;  // long flag without dashes, e.g. "lr"
  Section section;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// Every settable key, in a fixed order.
const std::vector<ConfigKey>& config_keys();
const ConfigKey* find_key(std::string_view key);

/// Parses a config file into (key, value) pairs, in file order. Throws
/// ConfigError on malformed lines or duplicate keys.
std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text,
                                                                   const std::string& origin);
std::vector<std::pair<std::string, std::string>> read_config_file(
    const std::filesystem::path& path);

/// Applies pairs; all unknown keys are reported together in one ConfigError.
void apply_pairs(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& pairs);

/// Canonical `key = value` dump of the given sections, sorted by key.
std::string dump_config(const RunConfig& cfg, unsigned sections);

std::uint64_t fnv1a64(std::string_view bytes);

/// Hash of the dumped sections minus the seed key, as 16 hex digits.
std::string config_hash(const RunConfig& cfg, unsigned sections, std::string_view extra = {});

/// Flag value if given, else $TAROPE_RUN_ROOT if set and non-empty, else "runs".
std::filesystem::path resolve_run_root(const std::optional<std::string>& flag_value);

/// <root>/<command>-<hash>-s<seed>
std::filesystem::path run_directory(const std::filesystem::path& root, std::string_view command,
                                    std::string_view hash, std::uint64_t seed);

/// Parses "on"/"off"/"true"/"false"/"1"/"0".
bool parse_bool(std::string_view key, std::string_view value);
std::size_t parse_size(std::string_view key, std::string_view value);
double parse_double(std::string_view key, std::string_view value);
std::uint64_t parse_u64(std::string_view key, std::string_view value);
std::string format_number(double v);

}  // namespace tarope
