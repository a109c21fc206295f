// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tarope/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tarope {

void FeatureSequence::validate() const {
  if (!frames.defined() || frames.rank() != 2 || frames.rows() == 0) {
    throw ConfigError(std::string(to_string(modality)) + " sequence needs at least one frame");
  }
  if (!(fps > 0.0)) throw ConfigError(std::string(to_string(modality)) + " fps must be positive");
}

std::vector<double> FeatureSequence::frame_timestamps(std::size_t count, double fps) {
  std::vector<double> t(count);
  for (std::size_t i = 0; i < count; ++i) t[i] = static_cast<double>(i) / fps;
  return t;
}

std::string_view to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::Concat: return "concat";
    case FusionKind::IsaIsa: return "isa-isa";
    case FusionKind::IcaIca: return "ica-ica";
    case FusionKind::IsaIca: return "isa-ica";
    case FusionKind::IcaIsa: return "ica-isa";
    case FusionKind::MsaMsa: return "msa-msa";
  }
  throw ConfigError("unknown fusion kind");
}

FusionKind parse_fusion(std::string_view name) {
  if (name == "concat") return FusionKind::Concat;
  if (name == "isa-isa") return FusionKind::IsaIsa;
  if (name == "ica-ica") return FusionKind::IcaIca;
  if (name == "isa-ica") return FusionKind::IsaIca;
  if (name == "ica-isa") return FusionKind::IcaIsa;
  if (name == "msa-msa" || name == "msa") return FusionKind::MsaMsa;
  throw ConfigError("unknown fusion '" + std::string(name) +
                    "' (expected concat, isa-isa, ica-ica, isa-ica, ica-isa, msa-msa)");
}

void EncoderConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (head_dim() % 2 != 0) {
    throw ConfigError("head_dim " + std::to_string(head_dim()) + " must be even for rotary use");
  }
  if (d_ff == 0 || n_classes < 2 || d_in_audio == 0 || d_in_video == 0 || d_emb == 0) {
    throw ConfigError("encoder widths must be positive and n_classes >= 2");
  }
  if (n_blocks == 0) throw ConfigError("n_blocks must be >= 1");
  if ((fusion == FusionKind::IsaIca || fusion == FusionKind::IcaIsa) && n_blocks != 2) {
    throw ConfigError(std::string(to_string(fusion)) + " is defined for exactly 2 layers");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (max_tokens == 0) throw ConfigError("max_tokens must be positive");
  rates.validate();
}

namespace {

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

const std::string& require_key(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("missing encoder key '" + key + "'");
  return it->second;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw ConfigError("encoder key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("encoder key '" + key + "' expects a number, got '" + v + "'");
  }
}

enum class LayerKind { Isa, Ica, Msa };

std::vector<LayerKind> layer_kinds(const EncoderConfig& cfg) {
  switch (cfg.fusion) {
    case FusionKind::Concat: return {};
    case FusionKind::IsaIsa: return std::vector<LayerKind>(cfg.n_blocks, LayerKind::Isa);
    case FusionKind::IcaIca: return std::vector<LayerKind>(cfg.n_blocks, LayerKind::Ica);
    case FusionKind::MsaMsa: return std::vector<LayerKind>(cfg.n_blocks, LayerKind::Msa);
    case FusionKind::IsaIca: return {LayerKind::Isa, LayerKind::Ica};
    case FusionKind::IcaIsa: return {LayerKind::Ica, LayerKind::Isa};
  }
  return {};
}

std::size_t block_parameters(const EncoderConfig& cfg) {
  const std::size_t d = cfg.d_model, f = cfg.d_ff;
  return 2 * (2 * d) + 4 * (d * d + d) + (d * f + f) + (f * d + d);
}

}  // namespace

KeyValues EncoderConfig::to_key_values() const {
  return {
      {"encoder.d_model", std::to_string(d_model)},
      {"encoder.n_heads", std::to_string(n_heads)},
      {"encoder.d_ff", std::to_string(d_ff)},
      {"encoder.n_blocks", std::to_string(n_blocks)},
      {"encoder.fusion", std::string(to_string(fusion))},
      {"encoder.posenc", std::string(to_string(posenc))},
      {"encoder.n_classes", std::to_string(n_classes)},
      {"encoder.d_in_audio", std::to_string(d_in_audio)},
      {"encoder.d_in_video", std::to_string(d_in_video)},
      {"encoder.d_emb", std::to_string(d_emb)},
      {"encoder.dropout", format_double(dropout)},
      {"encoder.theta_base", format_double(theta_base)},
      {"encoder.max_tokens", std::to_string(max_tokens)},
      {"encoder.eta_audio", format_double(rates.eta_audio)},
      {"encoder.eta_video", format_double(rates.eta_video)},
  };
}

EncoderConfig EncoderConfig::from_key_values(const KeyValues& kv) {
  EncoderConfig c;
  auto sz = [&](const char* k) { return to_size(k, require_key(kv, k)); };
  auto dbl = [&](const char* k) { return to_double(k, require_key(kv, k)); };
  c.d_model = sz("encoder.d_model");
  c.n_heads = sz("encoder.n_heads");
  c.d_ff = sz("encoder.d_ff");
  c.n_blocks = sz("encoder.n_blocks");
  c.fusion = parse_fusion(require_key(kv, "encoder.fusion"));
  c.posenc = parse_posenc(require_key(kv, "encoder.posenc"));
  c.n_classes = sz("encoder.n_classes");
  c.d_in_audio = sz("encoder.d_in_audio");
  c.d_in_video = sz("encoder.d_in_video");
  c.d_emb = sz("encoder.d_emb");
  c.dropout = dbl("encoder.dropout");
  c.theta_base = dbl("encoder.theta_base");
  c.max_tokens = sz("encoder.max_tokens");
  c.rates.eta_audio = dbl("encoder.eta_audio");
  c.rates.eta_video = dbl("encoder.eta_video");
  c.validate();
  return c;
}

Tensor ParameterSet::add(std::string name, Shape shape) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ContractError("duplicate parameter name '" + name + "'");
  }
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  entries_.push_back({std::move(name), t});
  return t;
}

const Tensor& ParameterSet::get(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

std::size_t ParameterSet::count_prefix(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (std::string_view(e.name).starts_with(prefix)) n += e.tensor.size();
  }
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

std::vector<std::vector<double>> ParameterSet::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.emplace_back(e.tensor.data().begin(), e.tensor.data().end());
  return out;
}

void ParameterSet::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != entries_.size()) throw ContractError("snapshot has wrong tensor count");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto dst = entries_[i].tensor.mutable_data();
    if (values[i].size() != dst.size()) {
      throw ContractError("snapshot size mismatch for '" + entries_[i].name + "'");
    }
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

PaddedSample pad_sample(const FeatureSequence& audio, const FeatureSequence& video,
                        std::size_t audio_pad, std::size_t video_pad) {
  auto pad = [](const FeatureSequence& s, std::size_t rows) {
    if (rows < s.length()) throw ShapeError("pad_sample: padded length shorter than sequence");
    std::vector<double> v(rows * s.dim(), 0.0);
    std::copy(s.frames.data().begin(), s.frames.data().end(), v.begin());
    return Tensor::from({rows, s.dim()}, std::move(v));
  };
  return {pad(audio, audio_pad), pad(video, video_pad), audio.length(), video.length()};
}

ParameterBreakdown expected_parameters(const EncoderConfig& cfg) {
  ParameterBreakdown b;
  const std::size_t d = cfg.d_model;
  b.input_projection = (cfg.d_in_audio * d + d) + (cfg.d_in_video * d + d);
  for (auto kind : layer_kinds(cfg)) {
    b.fusion += (kind == LayerKind::Msa ? 1 : 2) * block_parameters(cfg);
  }
  b.positional = cfg.posenc == PosEncKind::Learnable ? cfg.max_tokens * d : 0;
  const std::size_t pooled = cfg.fusion == FusionKind::Concat ? 2 * d : d;
  b.classifier = pooled * cfg.n_classes + cfg.n_classes;
  b.ctm_head = 2 * (d * cfg.d_emb + cfg.d_emb);
  return b;
}

namespace {

const EncoderConfig& validated(const EncoderConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

FusionModel::FusionModel(EncoderConfig cfg, std::uint64_t seed)
    : cfg_(validated(cfg)), bank_(cfg_.head_dim(), cfg_.theta_base) {
  const std::size_t d = cfg_.d_model;
  proj_audio_ = make_linear("input.audio", cfg_.d_in_audio, d);
  proj_video_ = make_linear("input.video", cfg_.d_in_video, d);
  const auto kinds = layer_kinds(cfg_);
  for (std::size_t l = 0; l < kinds.size(); ++l) {
    const std::string layer = "fusion.layer" + std::to_string(l);
    switch (kinds[l]) {
      case LayerKind::Msa:
        block_names_.push_back(layer + ".msa");
        break;
      case LayerKind::Isa:
        block_names_.push_back(layer + ".isa_audio");
        block_names_.push_back(layer + ".isa_video");
        break;
      case LayerKind::Ica:
        block_names_.push_back(layer + ".ica_audio");
        block_names_.push_back(layer + ".ica_video");
        break;
    }
  }
  for (const auto& name : block_names_) blocks_.push_back(make_block(name));
  if (cfg_.posenc == PosEncKind::Learnable) {
    pos_table_ = params_.add("positional.table", {cfg_.max_tokens, d});
  } else if (cfg_.posenc == PosEncKind::Sinusoidal) {
    sin_table_ = sinusoidal_table(cfg_.max_tokens, d);
  }
  const std::size_t pooled = cfg_.fusion == FusionKind::Concat ? 2 * d : d;
  classifier_ = make_linear("classifier", pooled, cfg_.n_classes);
  ctm_audio_ = make_linear("ctm.audio", d, cfg_.d_emb);
  ctm_video_ = make_linear("ctm.video", d, cfg_.d_emb);
  initialize(seed);
}

Linear FusionModel::make_linear(const std::string& prefix, std::size_t in, std::size_t out) {
  return {params_.add(prefix + ".weight", {in, out}), params_.add(prefix + ".bias", {out})};
}

AttentionBlock FusionModel::make_block(const std::string& prefix) {
  const std::size_t d = cfg_.d_model;
  AttentionBlock b;
  b.norm1 = {params_.add(prefix + ".norm1.gain", {d}), params_.add(prefix + ".norm1.bias", {d})};
  b.query = make_linear(prefix + ".attn.query", d, d);
  b.key = make_linear(prefix + ".attn.key", d, d);
  b.value = make_linear(prefix + ".attn.value", d, d);
  b.output = make_linear(prefix + ".attn.output", d, d);
  b.norm2 = {params_.add(prefix + ".norm2.gain", {d}), params_.add(prefix + ".norm2.bias", {d})};
  b.ff_in = make_linear(prefix + ".ffn.in", d, cfg_.d_ff);
  b.ff_out = make_linear(prefix + ".ffn.out", cfg_.d_ff, d);
  return b;
}

void FusionModel::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& e : params_.entries()) {
    auto data = e.tensor.node()->data.data();
    const std::size_t n = e.tensor.size();
    const std::string_view name = e.name;
    if (name.ends_with(".gain")) {
      std::fill(data, data + n, 1.0);
    } else if (name.ends_with(".bias")) {
      std::fill(data, data + n, 0.0);
    } else if (name == "positional.table") {
      std::normal_distribution<double> normal(0.0, 0.02);
      for (std::size_t i = 0; i < n; ++i) data[i] = normal(rng);
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(e.tensor.rows()));
      std::uniform_real_distribution<double> uni(-bound, bound);
      for (std::size_t i = 0; i < n; ++i) data[i] = uni(rng);
    }
  }
}

ParameterBreakdown FusionModel::breakdown() const {
  ParameterBreakdown b;
  b.input_projection = params_.count_prefix("input.");
  b.fusion = params_.count_prefix("fusion.");
  b.positional = params_.count_prefix("positional.");
  b.classifier = params_.count_prefix("classifier.");
  b.ctm_head = params_.count_prefix("ctm.");
  return b;
}

std::size_t count_parameters(const FusionModel& model) {
  return model.breakdown().ablation_count();
}

std::pair<Tensor, Tensor> FusionModel::project_inputs(const FeatureSequence& audio,
                                                      const FeatureSequence& video) const {
  if (audio.dim() != cfg_.d_in_audio || video.dim() != cfg_.d_in_video) {
    throw ConfigError("input widths (" + std::to_string(audio.dim()) + ", " +
                      std::to_string(video.dim()) + ") do not match the encoder (" +
                      std::to_string(cfg_.d_in_audio) + ", " + std::to_string(cfg_.d_in_video) +
                      ")");
  }
  return {proj_audio_(audio.frames), proj_video_(video.frames)};
}

namespace {

// Row groups of a joint [audio; video] sequence attend only to keys of their
// own modality. Falls back to all valid keys when a group would see none.
Tensor masked_softmax_by_modality(const Tensor& logits, std::span<const TokenInfo> q_tokens,
                                  std::span<const TokenInfo> k_tokens, const KeyMask& valid) {
  std::size_t split = 0;
  while (split < q_tokens.size() && q_tokens[split].modality == Modality::Audio) ++split;
  auto own = [&](Modality m) {
    KeyMask km = valid;
    bool any = false;
    for (std::size_t j = 0; j < km.size(); ++j) {
      if (k_tokens[j].modality != m) km[j] = 0;
      any = any || km[j] != 0;
    }
    return any ? km : valid;
  };
  std::vector<Tensor> parts;
  if (split > 0) parts.push_back(masked_softmax_rows(slice_rows(logits, 0, split), own(Modality::Audio)));
  if (split < q_tokens.size()) {
    parts.push_back(masked_softmax_rows(slice_rows(logits, split, q_tokens.size()),
                                        own(Modality::Video)));
  }
  return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

}  // namespace

Tensor FusionModel::attention(const AttentionBlock& blk, std::string_view name, const Tensor& xq,
                              const Tensor& xkv, const Stream& q, const Stream& kv,
                              const KeyMask& mask, const ForwardOptions& opts) const {
  auto [qr, kr] =
      apply_posenc(cfg_.posenc, blk.query(xq), blk.key(xkv), q.tokens, kv.tokens, cfg_.rates, bank_);
  const Tensor v = blk.value(xkv);
  const bool cross_split = opts.block_cross_modal && &q == &kv;
  const std::size_t hd = cfg_.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> heads;
  heads.reserve(cfg_.n_heads);
  for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
    const std::size_t c0 = h * hd, c1 = c0 + hd;
    const Tensor logits =
        scale(matmul_nt(slice_cols(qr, c0, c1), slice_cols(kr, c0, c1)), inv_sqrt);
    Tensor weights = cross_split ? masked_softmax_by_modality(logits, q.tokens, kv.tokens, mask)
                                 : masked_softmax_rows(logits, mask);
    if (opts.probe) {
      opts.probe->records.push_back(
          {std::string(name), h, logits, weights, q.tokens, kv.tokens, mask});
    }
    if (opts.training) weights = dropout(weights, cfg_.dropout, *opts.rng);
    heads.push_back(matmul(weights, slice_cols(v, c0, c1)));
  }
  return blk.output(cfg_.n_heads == 1 ? heads.front() : concat_cols(heads));
}

Tensor FusionModel::run_block(const AttentionBlock& blk, std::string_view name, const Stream& q,
                              const Stream& kv, const KeyMask& mask,
                              const ForwardOptions& opts) const {
  const Tensor nq = blk.norm1(q.x);
  const Tensor nkv = (&q == &kv) ? nq : blk.norm1(kv.x);
  const Tensor attn = attention(blk, name, nq, nkv, q, kv, mask, opts);
  const Tensor h = add(q.x, attn);
  Tensor ff = blk.ff_out(gelu(blk.ff_in(blk.norm2(h))));
  if (opts.training) ff = dropout(ff, cfg_.dropout, *opts.rng);
  return add(h, ff);
}

namespace {

KeyMask valid_mask(std::size_t padded, std::size_t valid) {
  KeyMask m(padded, 0);
  std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(valid), 1);
  return m;
}

}  // namespace

ForwardOutput FusionModel::forward(const PaddedSample& sample, const ForwardOptions& opts) const {
  if (opts.training && cfg_.dropout > 0.0 && opts.rng == nullptr) {
    throw ContractError("training forward needs a dropout RNG");
  }
  const std::size_t ta = sample.audio_len, tv = sample.video_len;
  const std::size_t ta_pad = sample.audio.rows(), tv_pad = sample.video.rows();
  if (ta + tv == 0) throw ShapeError("forward: clip has no tokens to pool");
  if (sample.audio.cols() != cfg_.d_in_audio || sample.video.cols() != cfg_.d_in_video) {
    throw ConfigError("forward: input widths do not match the encoder");
  }
  if (ta > ta_pad || tv > tv_pad) throw ShapeError("forward: valid length exceeds padding");

  Stream audio{proj_audio_(sample.audio), {}, valid_mask(ta_pad, ta)};
  Stream video{proj_video_(sample.video), {}, valid_mask(tv_pad, tv)};

  ForwardOutput out;
  out.shared_audio = slice_rows(audio.x, 0, ta);
  out.shared_video = slice_rows(video.x, 0, tv);

  // Padded tokens carry frame/sequence index 0; they are never attended to
  // and never pooled, so their positions are irrelevant.
  audio.tokens.resize(ta_pad);
  video.tokens.resize(tv_pad);
  for (std::size_t n = 0; n < ta_pad; ++n) {
    audio.tokens[n] = n < ta ? TokenInfo{Modality::Audio, n, n} : TokenInfo{Modality::Audio, 0, 0};
  }
  for (std::size_t m = 0; m < tv_pad; ++m) {
    video.tokens[m] =
        m < tv ? TokenInfo{Modality::Video, m, ta + m} : TokenInfo{Modality::Video, 0, 0};
  }

  if (cfg_.posenc == PosEncKind::Sinusoidal || cfg_.posenc == PosEncKind::Learnable) {
    if (ta + tv > cfg_.max_tokens) {
      throw ConfigError("clip has " + std::to_string(ta + tv) + " tokens but the positional table holds " +
                        std::to_string(cfg_.max_tokens));
    }
    const Tensor& table = cfg_.posenc == PosEncKind::Learnable ? pos_table_ : sin_table_;
    auto add_positions = [&](Stream& s) {
      std::vector<std::size_t> idx;
      idx.reserve(s.tokens.size());
      for (const auto& t : s.tokens) idx.push_back(t.sequence_index);
      s.x = add(s.x, gather_rows(table, idx));
    };
    add_positions(audio);
    add_positions(video);
  }

  if (cfg_.fusion == FusionKind::Concat) {
    const Tensor pa = mean_rows(slice_rows(audio.x, 0, ta));
    const Tensor pv = mean_rows(slice_rows(video.x, 0, tv));
    const Tensor parts[] = {pa, pv};
    out.logits = classifier_(concat_cols(parts));
    return out;
  }

  const auto kinds = layer_kinds(cfg_);
  std::size_t bi = 0;
  for (auto kind : kinds) {
    switch (kind) {
      case LayerKind::Msa: {
        const Tensor parts[] = {audio.x, video.x};
        Stream joint{concat_rows(parts), audio.tokens, audio.valid};
        joint.tokens.insert(joint.tokens.end(), video.tokens.begin(), video.tokens.end());
        joint.valid.insert(joint.valid.end(), video.valid.begin(), video.valid.end());
        joint.x = run_block(blocks_[bi], block_names_[bi], joint, joint, joint.valid, opts);
        audio.x = slice_rows(joint.x, 0, ta_pad);
        video.x = slice_rows(joint.x, ta_pad, ta_pad + tv_pad);
        ++bi;
        break;
      }
      case LayerKind::Isa: {
        Tensor xa = ta > 0 ? run_block(blocks_[bi], block_names_[bi], audio, audio, audio.valid, opts)
                           : audio.x;
        Tensor xv = tv > 0 ? run_block(blocks_[bi + 1], block_names_[bi + 1], video, video,
                                       video.valid, opts)
                           : video.x;
        audio.x = xa;
        video.x = xv;
        bi += 2;
        break;
      }
      case LayerKind::Ica: {
        // Both directions read the layer input; a missing partner stream
        // leaves the other stream unchanged.
        Tensor xa = tv > 0 ? run_block(blocks_[bi], block_names_[bi], audio, video, video.valid, opts)
                           : audio.x;
        Tensor xv = ta > 0 ? run_block(blocks_[bi + 1], block_names_[bi + 1], video, audio,
                                       audio.valid, opts)
                           : video.x;
        audio.x = xa;
        video.x = xv;
        bi += 2;
        break;
      }
    }
  }
  out.encoded_audio = slice_rows(audio.x, 0, ta);
  out.encoded_video = slice_rows(video.x, 0, tv);
  out.logits = classifier_(temporal_average_pool(out.encoded_audio, out.encoded_video));
  return out;
}

ForwardOutput FusionModel::forward(const FeatureSequence& audio, const FeatureSequence& video,
                                   const ForwardOptions& opts) const {
  return forward(pad_sample(audio, video, audio.length(), video.length()), opts);
}

Tensor temporal_average_pool(const Tensor& audio_tokens, const Tensor& video_tokens) {
  if (audio_tokens.rows() == 0) return mean_rows(video_tokens);
  if (video_tokens.rows() == 0) return mean_rows(audio_tokens);
  const Tensor parts[] = {audio_tokens, video_tokens};
  return mean_rows(concat_rows(parts));
}

}  // namespace tarope
