// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tarope/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tarope/binary_io.hpp"

namespace tarope {

namespace {

constexpr char kMagic[8] = {'T', 'R', 'P', 'C', 'K', 'P', 'T', '\0'};

std::string metadata_text(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

KeyValues parse_metadata(const std::string& text, const std::filesystem::path& path) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw IoError(path.string() + ": malformed checkpoint metadata");
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const FusionModel& model,
                     const KeyValues& extra_metadata) {
  KeyValues meta = extra_metadata;
  for (const auto& [k, v] : model.config().to_key_values()) meta[k] = v;
  const std::string text = metadata_text(meta);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  BinaryWriter w(out);
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  const auto entries = model.parameters().entries();
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) w.u64(d);
    for (double v : e.tensor.data()) w.f64(v);
  }
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  BinaryReader r(in, path.string());
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw IoError(path.string() + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  std::string text(r.u32(), '\0');
  r.bytes(text.data(), text.size());
  KeyValues meta = parse_metadata(text, path);

  FusionModel model(EncoderConfig::from_key_values(meta));
  const auto entries = model.parameters().entries();
  const std::uint32_t count = r.u32();
  if (count != entries.size()) {
    throw IoError(path.string() + ": checkpoint holds " + std::to_string(count) +
                  " tensors, model expects " + std::to_string(entries.size()));
  }
  for (const auto& e : entries) {
    std::string name(r.u32(), '\0');
    r.bytes(name.data(), name.size());
    if (name != e.name) {
      throw IoError(path.string() + ": expected tensor '" + e.name + "', found '" + name + "'");
    }
    Shape shape(r.u32());
    for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
    if (shape != e.tensor.shape()) {
      throw IoError(path.string() + ": tensor '" + name + "' has shape " + shape_string(shape) +
                    ", expected " + shape_string(e.tensor.shape()));
    }
    auto dst = e.tensor.node()->data.data();
    for (std::size_t i = 0; i < e.tensor.size(); ++i) dst[i] = r.f64();
    detail::check_finite(e.tensor.data(), "load_checkpoint(" + name + ")");
  }
  return {std::move(model), std::move(meta)};
}

}  // namespace tarope
