// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0
//
// Audio-visual fusion encoders. Both streams are linearly projected into a
// shared d_model space and fused by one of six strategies:
//
//   Concat  - pool each stream, concatenate, classify (no attention)
//   IsaIsa  - two layers of per-modality self-attention towers
//   IcaIca  - two layers of cross-attention (audio<-video, video<-audio)
//   IsaIca  - self-attention layer, then cross-attention layer
//   IcaIsa  - cross-attention layer, then self-attention layer
//   MsaMsa  - two shared blocks over the concatenated [audio; video] tokens
//
// Every attention block is pre-norm: x + Attn(LN(x)), then + FFN(LN(.)).
// Token outputs of both streams are mean-pooled and fed to a linear
// classifier. A separate pair of projections (the CTM head) maps the
// pre-encoder shared-space features to the matching-loss embedding space.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tarope/features.hpp"
#include "tarope/ops.hpp"
#include "tarope/posenc.hpp"
#include "tarope/tensor.hpp"

namespace tarope {

enum class FusionKind : std::uint8_t { Concat, IsaIsa, IcaIca, IsaIca, IcaIsa, MsaMsa };

std::string_view to_string(FusionKind kind);
/// Accepts "concat", "isa-isa", "ica-ica", "isa-ica", "ica-isa", "msa-msa"
/// (and "msa" as a shorthand for the shared-block model).
FusionKind parse_fusion(std::string_view name);
constexpr bool is_two_tower(FusionKind kind) {
  return kind == FusionKind::IsaIsa || kind == FusionKind::IcaIca ||
         kind == FusionKind::IsaIca || kind == FusionKind::IcaIsa;
}

using KeyValues = std::map<std::string, std::string>;

struct EncoderConfig {
  std::size_t d_model = 512;
  std::size_t n_heads = 8;
  std::size_t d_ff = 2048;
  std::size_t n_blocks = 2;
  FusionKind fusion = FusionKind::MsaMsa;
  PosEncKind posenc = PosEncKind::TaRope;
  std::size_t n_classes = 6;
  std::size_t d_in_audio = 1024;
  std::size_t d_in_video = 35;
  std::size_t d_emb = 128;  // CTM embedding width
  double dropout = 0.1;
  double theta_base = 10000.0;
  std::size_t max_tokens = 1024;  // additive table length
  RateSpec rates;

  std::size_t head_dim() const { return d_model / n_heads; }
  void validate() const;

  KeyValues to_key_values() const;
  static EncoderConfig from_key_values(const KeyValues& kv);
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered, named collection of learnable tensors.
class ParameterSet {
 public:
  Tensor add(std::string name, Shape shape);
  std::span<const NamedTensor> entries() const { return entries_; }
  const Tensor& get(std::string_view name) const;
  std::size_t count() const;
  std::size_t count_prefix(std::string_view prefix) const;
  void zero_grad();

  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  std::vector<NamedTensor> entries_;
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

struct AttentionBlock {
  LayerNormParams norm1, norm2;
  Linear query, key, value, output;
  Linear ff_in, ff_out;
};

/// Captures pre-softmax logits and attention weights of every head of every
/// attention call, in execution order.
struct AttentionProbe {
  struct Record {
    std::string block;
    std::size_t head = 0;
    Tensor logits;   // [Tq x Tk], scaled by 1/sqrt(head_dim)
    Tensor weights;  // [Tq x Tk]
    std::vector<TokenInfo> q_tokens;
    std::vector<TokenInfo> k_tokens;
    KeyMask key_mask;
  };
  std::vector<Record> records;
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // dropout source, required when training
  AttentionProbe* probe = nullptr;
  /// Masks every cross-modal key inside shared (MSA) blocks.
  bool block_cross_modal = false;
};

/// One clip right-padded to a batch-wide length. Only the first
/// audio_len / video_len rows are real; padded keys are masked everywhere.
struct PaddedSample {
  Tensor audio;  // [Ta_pad x d_in_audio]
  Tensor video;  // [Tv_pad x d_in_video]
  std::size_t audio_len = 0;
  std::size_t video_len = 0;
};

PaddedSample pad_sample(const FeatureSequence& audio, const FeatureSequence& video,
                        std::size_t audio_pad, std::size_t video_pad);

struct ForwardOutput {
  Tensor logits;         // [1 x n_classes]
  Tensor shared_audio;   // [Ta x d_model], after input projection, valid rows
  Tensor shared_video;   // [Tv x d_model]
  Tensor encoded_audio;  // fused token outputs, valid rows (empty for Concat)
  Tensor encoded_video;
};

struct ParameterBreakdown {
  std::size_t input_projection = 0;
  std::size_t fusion = 0;
  std::size_t positional = 0;
  std::size_t classifier = 0;
  std::size_t ctm_head = 0;

  /// The size reported for fusion ablations: input projections + fusion blocks.
  std::size_t ablation_count() const { return input_projection + fusion; }
  std::size_t total() const {
    return input_projection + fusion + positional + classifier + ctm_head;
  }
};

/// Closed-form parameter counts for a configuration, without allocating it.
ParameterBreakdown expected_parameters(const EncoderConfig& cfg);

class FusionModel {
 public:
  explicit FusionModel(EncoderConfig cfg, std::uint64_t seed = 0);

  const EncoderConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  ParameterBreakdown breakdown() const;

  /// Independent linear maps into the shared d_model space.
  std::pair<Tensor, Tensor> project_inputs(const FeatureSequence& audio,
                                           const FeatureSequence& video) const;

  ForwardOutput forward(const PaddedSample& sample, const ForwardOptions& opts = {}) const;
  ForwardOutput forward(const FeatureSequence& audio, const FeatureSequence& video,
                        const ForwardOptions& opts = {}) const;

  /// CTM-space projections, before L2 normalization.
  const Linear& ctm_audio() const { return ctm_audio_; }
  const Linear& ctm_video() const { return ctm_video_; }

 private:
  struct Stream {
    Tensor x;
    std::vector<TokenInfo> tokens;
    KeyMask valid;
  };

  Tensor attention(const AttentionBlock& blk, std::string_view name, const Tensor& xq,
                   const Tensor& xkv, const Stream& q, const Stream& kv, const KeyMask& mask,
                   const ForwardOptions& opts) const;
  Tensor run_block(const AttentionBlock& blk, std::string_view name, const Stream& q,
                   const Stream& kv, const KeyMask& mask, const ForwardOptions& opts) const;
  AttentionBlock make_block(const std::string& prefix);
  Linear make_linear(const std::string& prefix, std::size_t in, std::size_t out);
  void initialize(std::uint64_t seed);

  EncoderConfig cfg_;
  ParameterSet params_;
  RotaryBank bank_;
  Linear proj_audio_, proj_video_;
  std::vector<AttentionBlock> blocks_;
  std::vector<std::string> block_names_;
  Tensor pos_table_;     // learnable [max_tokens x d_model]
  Tensor sin_table_;     // constant [max_tokens x d_model]
  Linear classifier_;
  Linear ctm_audio_, ctm_video_;
};

/// Table-2-style parameter count: input projections plus fusion blocks.
std::size_t count_parameters(const FusionModel& model);

/// Mean of `encoded` rows of both streams (or of the pooled concat) -> logits.
Tensor temporal_average_pool(const Tensor& audio_tokens, const Tensor& video_tokens);

}  // namespace tarope
