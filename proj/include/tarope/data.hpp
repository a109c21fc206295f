// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0
//
// Datasets: a synthetic generator whose labels depend on which audio and
// video events coincide in physical time, plus reading and writing of
// precomputed feature files and manifests.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tarope/encoder.hpp"
#include "tarope/features.hpp"

namespace tarope {

/// Synthetic clip generator settings.
///
/// Every clip carries one event of each audio type and one of each video
/// type. Exactly one (audio type, video type) pair is placed at the same
/// physical time; every other cross-modal pair is at least
/// `coincidence_window` seconds apart. The label names the coincident pair,
/// so it cannot be read off either stream alone.
struct SyntheticSpec {
  std::size_t n_classes = 6;
  std::size_t train_samples = 600;
  std::size_t test_samples = 200;
  double duration_min = 1.5;  // seconds
  double duration_max = 2.5;
  RateSpec rates;
  std::size_t d_in_audio = 1024;
  std::size_t d_in_video = 35;
  double noise_std = 0.3;
  double coincidence_window = 0.25;  // seconds
  std::size_t distractors = 1;       // extra single-stream events per clip
  double bump_width = 0.06;          // Gaussian event width, seconds
  double event_amplitude = 1.0;
  double envelope_amplitude = 0.5;   // shared slow loudness-like signal
  double phase_amplitude = 0.5;      // shared rotating phase signal
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t audio_types() const;
  std::size_t video_types() const;
  /// (audio type, video type) of the coincident pair for `label`.
  std::pair<std::size_t, std::size_t> pair_for_label(std::size_t label) const;

  KeyValues to_key_values() const;
};

struct SyntheticEvent {
  Modality modality = Modality::Audio;
  std::size_t type = 0;
  double time = 0.0;  // seconds, bump centre
  bool coincident = false;
  bool distractor = false;
};

struct Sample {
  std::string id;
  FeatureSequence audio;
  FeatureSequence video;
  std::size_t label = 0;
  std::string split;
  std::vector<SyntheticEvent> events;  // empty for loaded data
};

using Dataset = std::vector<Sample>;

/// Feature directions fixed by the SyntheticSpec: one unit signature per event type
/// and the directions carrying the shared envelope and phase signals. All
/// directions of a modality are orthonormal.
struct SyntheticWorld {
  std::vector<std::vector<double>> audio_signatures;
  std::vector<std::vector<double>> video_signatures;
  std::vector<std::vector<double>> audio_shared;  // [envelope, phase x4]
  std::vector<std::vector<double>> video_shared;
};

SyntheticWorld synthetic_world(const SyntheticSpec& spec);

/// Deterministic in spec.seed. Train samples come first, then test; labels
/// cycle through the classes within each split. Stored values are rounded
/// to float32 so saved and in-memory datasets are identical.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Feature file (little-endian):
//   char[4] magic "AVFT" | u32 version (1) | u32 modality (0 audio, 1 video)
//   f64 fps | u32 T | u32 d | f32 values[T*d], row-major
inline constexpr std::uint32_t kFeatureFileVersion = 1;

void save_features(const std::filesystem::path& path, const FeatureSequence& seq);
FeatureSequence load_features(const std::filesystem::path& path);

struct ManifestRecord {
  std::string id;
  std::string audio_path;  // relative to the data directory unless absolute
  std::string video_path;
  std::size_t label = 0;
  std::string split;
};

/// Tab-separated, one record per line: id, audio path, video path, label,
/// split. Lines starting with '#' are comments.
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

struct LoadExpectations {
  std::size_t n_classes = 0;  // 0 = unchecked
  std::size_t d_in_audio = 0;
  std::size_t d_in_video = 0;
};

/// Loads every record of `split` (all records if empty) from
/// data_dir/manifest.tsv.
Dataset load_dataset(const std::filesystem::path& data_dir, const std::string& split,
                     const LoadExpectations& expect = {});

/// Writes features/<id>.{audio,video}.feat, manifest.tsv and dataset.conf.
void write_dataset(const std::filesystem::path& data_dir, const Dataset& data,
                   const KeyValues& description = {});

Dataset filter_split(const Dataset& data, const std::string& split);

}  // namespace tarope
