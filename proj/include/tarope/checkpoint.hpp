// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container (little-endian):
//
//   char[8]  magic "TRPCKPT\0"
//   u32      version (1)
//   u32      metadata byte length, then UTF-8 "key = value\n" lines
//   u32      tensor count
//   per tensor:
//     u32 name length, name bytes
//     u32 rank, u64 dims[rank]
//     f64 values[prod(dims)]
//
// Metadata holds the encoder configuration, so a checkpoint alone is enough
// to rebuild the model.

#pragma once

#include <filesystem>
#include <string>

#include "tarope/encoder.hpp"

namespace tarope {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const FusionModel& model,
                     const KeyValues& extra_metadata = {});

struct LoadedCheckpoint {
  FusionModel model;
  KeyValues metadata;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tarope
