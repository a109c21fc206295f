// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0
//
// Positional encodings: additive sinusoidal / learnable tables and rotary
// embeddings applied to queries and keys. The temporally aligned rotary
// variant places video tokens on the audio timeline, so a rotation angle
// measures physical time rather than token index.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tarope/tensor.hpp"

namespace tarope {

enum class Modality : std::uint8_t { Audio = 0, Video = 1 };

std::string_view to_string(Modality m);

/// Frame rates of the two streams, in frames per second.
struct RateSpec {
  double eta_audio = 50.0;
  double eta_video = 30.0;

  void validate() const;
  /// Audio frames per video frame (eta_a / eta_v).
  double video_to_audio() const { return eta_audio / eta_video; }
};

/// Per-pair rotary frequencies w_k = theta_base^(-2k/head_dim).
class RotaryBank {
 public:
  explicit RotaryBank(std::size_t head_dim, double theta_base = 10000.0);
  /// Bank with explicitly chosen (strictly decreasing, positive) frequencies.
  static RotaryBank with_frequencies(std::vector<double> frequencies);

  std::size_t head_dim() const { return 2 * frequencies_.size(); }
  std::span<const double> frequencies() const { return frequencies_; }

 private:
  RotaryBank() = default;
  std::vector<double> frequencies_;
};

/// Rotates each consecutive coordinate pair (2k, 2k+1) of row t by
/// positions[t] * w_k. When x is wider than the bank, every head_dim-wide
/// column block (one attention head) is rotated with the same bank.
Tensor rope_rotate(const Tensor& x, std::span<const double> positions, const RotaryBank& bank);

/// Audio frames keep their index; video frame m maps to m * eta_a / eta_v.
std::vector<double> tarope_positions(Modality modality, std::span<const std::int64_t> indices,
                                     const RateSpec& rates);

enum class PosEncKind : std::uint8_t { Sinusoidal, Learnable, Rope, TaRope };

std::string_view to_string(PosEncKind kind);
PosEncKind parse_posenc(std::string_view name);

/// True for the variants applied by rotating queries and keys.
constexpr bool is_rotary(PosEncKind kind) {
  return kind == PosEncKind::Rope || kind == PosEncKind::TaRope;
}

/// Token metadata: which stream it came from, its frame index within that
/// stream, and its index in the concatenated [audio; video] sequence.
struct TokenInfo {
  Modality modality = Modality::Audio;
  std::size_t frame = 0;
  std::size_t sequence_index = 0;
};

/// Layout of a clip with `audio_frames` then `video_frames` tokens.
std::vector<TokenInfo> concatenated_layout(std::size_t audio_frames, std::size_t video_frames);

/// Scalar rotary position of every token: the concatenated index for Rope,
/// the aligned timeline position for TaRope. Throws for additive variants.
std::vector<double> rotary_positions(PosEncKind kind, std::span<const TokenInfo> tokens,
                                     const RateSpec& rates);

struct RotatedQueryKey {
  Tensor q;
  Tensor k;
};

/// Positional treatment at attention time. Rotary variants rotate q and k
/// by their tokens' positions; additive variants return q and k unchanged
/// because their table was already added to the token embeddings.
RotatedQueryKey apply_posenc(PosEncKind kind, const Tensor& q, const Tensor& k,
                             std::span<const TokenInfo> q_tokens,
                             std::span<const TokenInfo> k_tokens, const RateSpec& rates,
                             const RotaryBank& bank);

/// Standard sin/cos table, shape [length x width].
Tensor sinusoidal_table(std::size_t length, std::size_t width);

}  // namespace tarope
