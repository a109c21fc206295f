// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tarope/posenc.hpp"

#include <cmath>
#include <string>

namespace tarope {

std::string_view to_string(Modality m) { return m == Modality::Audio ? "audio" : "video"; }

void RateSpec::validate() const {
  if (!(eta_audio > 0.0) || !(eta_video > 0.0)) {
    throw ConfigError("frame rates must be positive (audio " + std::to_string(eta_audio) +
                      ", video " + std::to_string(eta_video) + ")");
  }
}

RotaryBank::RotaryBank(std::size_t head_dim, double theta_base) {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ConfigError("rotary head_dim must be even and positive, got " +
                      std::to_string(head_dim));
  }
  if (!(theta_base > 1.0)) throw ConfigError("rotary theta_base must exceed 1");
  frequencies_.resize(head_dim / 2);
  for (std::size_t k = 0; k < frequencies_.size(); ++k) {
    frequencies_[k] =
        std::pow(theta_base, -2.0 * static_cast<double>(k) / static_cast<double>(head_dim));
  }
}

RotaryBank RotaryBank::with_frequencies(std::vector<double> frequencies) {
  if (frequencies.empty()) throw ConfigError("rotary bank needs at least one frequency");
  for (std::size_t k = 0; k < frequencies.size(); ++k) {
    if (!(frequencies[k] > 0.0) || (k > 0 && !(frequencies[k] < frequencies[k - 1]))) {
      throw ConfigError("rotary frequencies must be positive and strictly decreasing");
    }
  }
  RotaryBank bank;
  bank.frequencies_ = std::move(frequencies);
  return bank;
}

Tensor rope_rotate(const Tensor& x, std::span<const double> positions, const RotaryBank& bank) {
  const std::size_t t_len = x.rows(), width = x.cols();
  const std::size_t hd = bank.head_dim();
  if (width % hd != 0) {
    throw ConfigError("rope_rotate: width " + std::to_string(width) +
                      " is not a multiple of head_dim " + std::to_string(hd));
  }
  if (positions.size() != t_len) {
    throw ShapeError("rope_rotate: " + std::to_string(positions.size()) + " positions for " +
                     std::to_string(t_len) + " rows");
  }
  const auto freqs = bank.frequencies();
  const std::size_t pairs = freqs.size();
  std::vector<double> cos_t(t_len * pairs), sin_t(t_len * pairs);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t k = 0; k < pairs; ++k) {
      const double angle = positions[t] * freqs[k];
      cos_t[t * pairs + k] = std::cos(angle);
      sin_t[t * pairs + k] = std::sin(angle);
    }
  }
  std::vector<double> y(x.size());
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t h = 0; h < width; h += hd) {
      for (std::size_t k = 0; k < pairs; ++k) {
        const std::size_t i = t * width + h + 2 * k;
        const double c = cos_t[t * pairs + k], s = sin_t[t * pairs + k];
        y[i] = x[i] * c - x[i + 1] * s;
        y[i + 1] = x[i] * s + x[i + 1] * c;
      }
    }
  }
  Tensor out = Tensor::from(x.shape(), std::move(y));
  if (detail::should_record({&x})) {
    detail::attach_backward(
        out, "rope_rotate",
        [x, out, t_len, width, hd, pairs, cos_t = std::move(cos_t), sin_t = std::move(sin_t)] {
          const auto& g = out.node()->grad;
          if (g.empty() || !x.requires_grad()) return;
          auto& dx = x.node()->grad_buffer();
          // Transpose of a rotation is the rotation by the negated angle.
          for (std::size_t t = 0; t < t_len; ++t) {
            for (std::size_t h = 0; h < width; h += hd) {
              for (std::size_t k = 0; k < pairs; ++k) {
                const std::size_t i = t * width + h + 2 * k;
                const double c = cos_t[t * pairs + k], s = sin_t[t * pairs + k];
                dx[i] += g[i] * c + g[i + 1] * s;
                dx[i + 1] += -g[i] * s + g[i + 1] * c;
              }
            }
          }
        });
  }
  return out;
}

namespace {

// (m * eta_a) / eta_v keeps commensurate frames exact: video 3 at 50/30 is 5.0.
double aligned_position(Modality modality, double frame, const RateSpec& rates) {
  if (modality == Modality::Audio) return frame;
  return frame * rates.eta_audio / rates.eta_video;
}

}  // namespace

std::vector<double> tarope_positions(Modality modality, std::span<const std::int64_t> indices,
                                     const RateSpec& rates) {
  rates.validate();
  std::vector<double> out;
  out.reserve(indices.size());
  for (std::int64_t i : indices) {
    if (i < 0) throw ContractError("tarope_positions: negative frame index");
    out.push_back(aligned_position(modality, static_cast<double>(i), rates));
  }
  return out;
}

std::string_view to_string(PosEncKind kind) {
  switch (kind) {
    case PosEncKind::Sinusoidal: return "sinusoidal";
    case PosEncKind::Learnable: return "learnable";
    case PosEncKind::Rope: return "rope";
    case PosEncKind::TaRope: return "tarope";
  }
  throw ConfigError("unknown positional encoding");
}

PosEncKind parse_posenc(std::string_view name) {
  if (name == "sinusoidal") return PosEncKind::Sinusoidal;
  if (name == "learnable") return PosEncKind::Learnable;
  if (name == "rope") return PosEncKind::Rope;
  if (name == "tarope") return PosEncKind::TaRope;
  throw ConfigError("unknown positional encoding '" + std::string(name) +
                    "' (expected sinusoidal, learnable, rope, tarope)");
}

std::vector<TokenInfo> concatenated_layout(std::size_t audio_frames, std::size_t video_frames) {
  std::vector<TokenInfo> tokens;
  tokens.reserve(audio_frames + video_frames);
  for (std::size_t n = 0; n < audio_frames; ++n) tokens.push_back({Modality::Audio, n, n});
  for (std::size_t m = 0; m < video_frames; ++m)
    tokens.push_back({Modality::Video, m, audio_frames + m});
  return tokens;
}

std::vector<double> rotary_positions(PosEncKind kind, std::span<const TokenInfo> tokens,
                                     const RateSpec& rates) {
  std::vector<double> pos;
  pos.reserve(tokens.size());
  switch (kind) {
    case PosEncKind::Rope:
      for (const auto& t : tokens) pos.push_back(static_cast<double>(t.sequence_index));
      return pos;
    case PosEncKind::TaRope: {
      rates.validate();
      for (const auto& t : tokens)
        pos.push_back(aligned_position(t.modality, static_cast<double>(t.frame), rates));
      return pos;
    }
    default:
      throw ConfigError("rotary_positions: " + std::string(to_string(kind)) +
                        " is not a rotary encoding");
  }
}

RotatedQueryKey apply_posenc(PosEncKind kind, const Tensor& q, const Tensor& k,
                             std::span<const TokenInfo> q_tokens,
                             std::span<const TokenInfo> k_tokens, const RateSpec& rates,
                             const RotaryBank& bank) {
  if (q_tokens.size() != q.rows() || k_tokens.size() != k.rows()) {
    throw ShapeError("apply_posenc: token metadata does not match sequence length");
  }
  switch (kind) {
    case PosEncKind::Sinusoidal:
    case PosEncKind::Learnable:
      return {q, k};
    case PosEncKind::Rope:
    case PosEncKind::TaRope: {
      const auto qp = rotary_positions(kind, q_tokens, rates);
      const auto kp = rotary_positions(kind, k_tokens, rates);
      return {rope_rotate(q, qp, bank), rope_rotate(k, kp, bank)};
    }
  }
  throw ConfigError("apply_posenc: unknown positional encoding");
}

Tensor sinusoidal_table(std::size_t length, std::size_t width) {
  std::vector<double> v(length * width);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < width; i += 2) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(width));
      v[pos * width + i] = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < width) v[pos * width + i + 1] = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return Tensor::from({length, width}, std::move(v));
}

}  // namespace tarope
