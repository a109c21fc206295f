// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tarope/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "tarope/binary_io.hpp"

namespace tarope {

namespace {

constexpr std::size_t kSharedDirections = 5;  // envelope + 2 phase pairs
constexpr double kPhaseFreqs[2] = {0.7, 1.3};  // Hz
constexpr double kMargin = 0.1;                // seconds kept free at clip edges

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::vector<std::vector<double>> orthonormal_set(std::size_t count, std::size_t dim,
                                                 std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> out;
  while (out.size() < count) {
    std::vector<double> v(dim);
    for (double& x : v) x = normal(rng);
    for (const auto& u : out) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += v[i] * u[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * u[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n_classes < 2) throw ConfigError("synthetic data needs n_classes >= 2");
  if (!(duration_min > 0.0) || duration_max < duration_min) {
    throw ConfigError("synthetic duration range is invalid");
  }
  if (!(coincidence_window > 0.0) || coincidence_window >= duration_min) {
    throw ConfigError("coincidence_window must be positive and shorter than the clip duration");
  }
  if (noise_std < 0.0 || !(bump_width > 0.0)) {
    throw ConfigError("noise_std must be >= 0 and bump_width > 0");
  }
  rates.validate();
  const std::size_t shared = (envelope_amplitude != 0.0 || phase_amplitude != 0.0) ? kSharedDirections : 0;
  if (d_in_audio < audio_types() + shared || d_in_video < video_types() + shared) {
    throw ConfigError("feature widths too small for " + std::to_string(audio_types()) + "/" +
                      std::to_string(video_types()) + " event types plus shared directions");
  }
}

std::size_t SyntheticSpec::video_types() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(n_classes))));
}

std::size_t SyntheticSpec::audio_types() const {
  return (n_classes + video_types() - 1) / video_types();
}

std::pair<std::size_t, std::size_t> SyntheticSpec::pair_for_label(std::size_t label) const {
  if (label >= n_classes) throw ContractError("label outside class range");
  return {label / video_types(), label % video_types()};
}

KeyValues SyntheticSpec::to_key_values() const {
  return {{"data.n_classes", std::to_string(n_classes)},
          {"data.train_samples", std::to_string(train_samples)},
          {"data.test_samples", std::to_string(test_samples)},
          {"data.duration_min", fmt(duration_min)},
          {"data.duration_max", fmt(duration_max)},
          {"data.eta_audio", fmt(rates.eta_audio)},
          {"data.eta_video", fmt(rates.eta_video)},
          {"data.d_in_audio", std::to_string(d_in_audio)},
          {"data.d_in_video", std::to_string(d_in_video)},
          {"data.noise_std", fmt(noise_std)},
          {"data.coincidence_window", fmt(coincidence_window)},
          {"data.distractors", std::to_string(distractors)},
          {"data.bump_width", fmt(bump_width)},
          {"data.event_amplitude", fmt(event_amplitude)},
          {"data.envelope_amplitude", fmt(envelope_amplitude)},
          {"data.phase_amplitude", fmt(phase_amplitude)},
          {"data.seed", std::to_string(seed)}};
}

SyntheticWorld synthetic_world(const SyntheticSpec& spec) {
  spec.validate();
  auto rng = sample_rng(spec.seed, 0xD1, 0);
  const std::size_t shared_a = std::min(kSharedDirections, spec.d_in_audio - spec.audio_types());
  const std::size_t shared_v = std::min(kSharedDirections, spec.d_in_video - spec.video_types());
  auto a = orthonormal_set(spec.audio_types() + shared_a, spec.d_in_audio, rng);
  auto v = orthonormal_set(spec.video_types() + shared_v, spec.d_in_video, rng);
  SyntheticWorld w;
  w.audio_signatures.assign(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(spec.audio_types()));
  w.audio_shared.assign(a.begin() + static_cast<std::ptrdiff_t>(spec.audio_types()), a.end());
  w.video_signatures.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(spec.video_types()));
  w.video_shared.assign(v.begin() + static_cast<std::ptrdiff_t>(spec.video_types()), v.end());
  return w;
}

namespace {

struct Placement {
  double duration = 0.0;
  std::vector<SyntheticEvent> events;
};

bool far_from_other_modality(const std::vector<SyntheticEvent>& events, Modality m, double t,
                             double window) {
  for (const auto& e : events) {
    if (e.modality != m && std::abs(e.time - t) < window) return false;
  }
  return true;
}

bool far_from_same_modality(const std::vector<SyntheticEvent>& events, Modality m, double t,
                            double gap) {
  for (const auto& e : events) {
    if (e.modality == m && std::abs(e.time - t) < gap) return false;
  }
  return true;
}

Placement place_events(const SyntheticSpec& spec, std::size_t label, std::mt19937_64& rng) {
  const auto [a_star, v_star] = spec.pair_for_label(label);
  std::uniform_real_distribution<double> dur(spec.duration_min, spec.duration_max);
  const double window = spec.coincidence_window;
  const double same_gap = 0.5 * window;
  for (int attempt = 0; attempt < 2000; ++attempt) {
    Placement p;
    p.duration = dur(rng);
    const double lo = kMargin, hi = p.duration - kMargin;
    // Coincident pair sits on the video frame grid so both streams can
    // represent it to within half an audio frame.
    const double eta_v = spec.rates.eta_video;
    const auto j_lo = static_cast<long>(std::ceil(lo * eta_v));
    const auto j_hi = static_cast<long>(std::floor(hi * eta_v));
    if (j_hi < j_lo) continue;
    std::uniform_int_distribution<long> frame(j_lo, j_hi);
    const double t_star = static_cast<double>(frame(rng)) / eta_v;
    p.events.push_back({Modality::Audio, a_star, t_star, true, false});
    p.events.push_back({Modality::Video, v_star, t_star, true, false});

    std::uniform_real_distribution<double> when(lo, hi);
    bool ok = true;
    auto place = [&](Modality m, std::size_t type, bool distractor) {
      for (int tries = 0; tries < 200; ++tries) {
        const double t = when(rng);
        if (far_from_other_modality(p.events, m, t, window) &&
            far_from_same_modality(p.events, m, t, same_gap)) {
          p.events.push_back({m, type, t, false, distractor});
          return true;
        }
      }
      return false;
    };
    for (std::size_t a = 0; a < spec.audio_types() && ok; ++a)
      if (a != a_star) ok = place(Modality::Audio, a, false);
    for (std::size_t v = 0; v < spec.video_types() && ok; ++v)
      if (v != v_star) ok = place(Modality::Video, v, false);
    std::uniform_int_distribution<int> coin(0, 1);
    for (std::size_t d = 0; d < spec.distractors && ok; ++d) {
      const Modality m = coin(rng) ? Modality::Video : Modality::Audio;
      const std::size_t types = m == Modality::Audio ? spec.audio_types() : spec.video_types();
      std::uniform_int_distribution<std::size_t> type(0, types - 1);
      ok = place(m, type(rng), true);
    }
    if (ok) return p;
  }
  throw ConfigError("could not place synthetic events; clips are too short for the event count");
}

FeatureSequence render_stream(const SyntheticSpec& spec, const SyntheticWorld& world,
                              Modality m, const Placement& p, double envelope_freq,
                              double envelope_phase, const double phase_offsets[2],
                              std::mt19937_64& rng) {
  const double fps = m == Modality::Audio ? spec.rates.eta_audio : spec.rates.eta_video;
  const std::size_t dim = m == Modality::Audio ? spec.d_in_audio : spec.d_in_video;
  const auto& signatures = m == Modality::Audio ? world.audio_signatures : world.video_signatures;
  const auto& shared = m == Modality::Audio ? world.audio_shared : world.video_shared;
  const std::size_t frames = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(p.duration * fps)));
  std::normal_distribution<double> noise(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  const double inv_w2 = 1.0 / (2.0 * spec.bump_width * spec.bump_width);

  std::vector<double> v(frames * dim, 0.0);
  for (std::size_t i = 0; i < frames; ++i) {
    const double t = static_cast<double>(i) / fps;
    double* row = v.data() + i * dim;
    for (const auto& e : p.events) {
      if (e.modality != m) continue;
      const double a = spec.event_amplitude * std::exp(-(t - e.time) * (t - e.time) * inv_w2);
      for (std::size_t k = 0; k < dim; ++k) row[k] += a * signatures[e.type][k];
    }
    if (!shared.empty()) {
      double coeff[kSharedDirections];
      coeff[0] = spec.envelope_amplitude * std::sin(two_pi * envelope_freq * t + envelope_phase);
      for (int f = 0; f < 2; ++f) {
        const double angle = two_pi * kPhaseFreqs[f] * t + phase_offsets[f];
        coeff[1 + 2 * f] = spec.phase_amplitude * std::cos(angle);
        coeff[2 + 2 * f] = spec.phase_amplitude * std::sin(angle);
      }
      for (std::size_t s = 0; s < shared.size(); ++s)
        for (std::size_t k = 0; k < dim; ++k) row[k] += coeff[s] * shared[s][k];
    }
    if (spec.noise_std > 0.0)
      for (std::size_t k = 0; k < dim; ++k) row[k] += spec.noise_std * noise(rng);
  }
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  return {Tensor::from({frames, dim}, std::move(v)), fps, m};
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const SyntheticWorld world = synthetic_world(spec);
  Dataset out;
  out.reserve(spec.train_samples + spec.test_samples);
  const std::size_t total = spec.train_samples + spec.test_samples;
  for (std::size_t idx = 0; idx < total; ++idx) {
    const bool train = idx < spec.train_samples;
    const std::size_t local = train ? idx : idx - spec.train_samples;
    auto rng = sample_rng(spec.seed, train ? 1 : 2, local);
    Sample s;
    s.split = train ? "train" : "test";
    std::ostringstream id;
    id << s.split << '-' << std::setw(6) << std::setfill('0') << local;
    s.id = id.str();
    s.label = local % spec.n_classes;
    const Placement p = place_events(spec, s.label, rng);
    std::uniform_real_distribution<double> freq(0.8, 1.6), phase(0.0, 2.0 * std::numbers::pi);
    const double env_f = freq(rng), env_phase = phase(rng);
    const double offsets[2] = {phase(rng), phase(rng)};
    s.audio = render_stream(spec, world, Modality::Audio, p, env_f, env_phase, offsets, rng);
    s.video = render_stream(spec, world, Modality::Video, p, env_f, env_phase, offsets, rng);
    s.events = p.events;
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

constexpr char kFeatureMagic[4] = {'A', 'V', 'F', 'T'};

}  // namespace

void save_features(const std::filesystem::path& path, const FeatureSequence& seq) {
  seq.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open feature file for writing: " + path.string());
  BinaryWriter w(out);
  w.bytes(kFeatureMagic, sizeof kFeatureMagic);
  w.u32(kFeatureFileVersion);
  w.u32(static_cast<std::uint32_t>(seq.modality));
  w.f64(seq.fps);
  w.u32(static_cast<std::uint32_t>(seq.length()));
  w.u32(static_cast<std::uint32_t>(seq.dim()));
  for (double v : seq.frames.data()) w.f32(static_cast<float>(v));
  if (!out) throw IoError("failed writing feature file: " + path.string());
}

FeatureSequence load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open feature file");
  BinaryReader r(in, path.string());
  char magic[4];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kFeatureMagic, sizeof magic) != 0) {
    throw IoError(path.string() + ": malformed header (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kFeatureFileVersion) {
    throw IoError(path.string() + ": malformed header (unsupported version " +
                  std::to_string(version) + ")");
  }
  const std::uint32_t modality = r.u32();
  if (modality > 1) throw IoError(path.string() + ": malformed header (modality tag)");
  const double fps = r.f64();
  if (!std::isfinite(fps) || !(fps > 0.0)) {
    throw IoError(path.string() + ": malformed header (fps must be positive)");
  }
  const std::uint32_t frames = r.u32(), dim = r.u32();
  if (frames == 0 || dim == 0) throw IoError(path.string() + ": malformed header (empty shape)");
  std::vector<double> v(static_cast<std::size_t>(frames) * dim);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float x = r.f32();
    if (!std::isfinite(x)) {
      throw IoError(path.string() + ": non-finite value at frame " + std::to_string(i / dim) +
                    ", dim " + std::to_string(i % dim));
    }
    v[i] = x;
  }
  if (!r.at_end()) throw IoError(path.string() + ": trailing bytes after feature data");
  return {Tensor::from({frames, dim}, std::move(v)), fps, static_cast<Modality>(modality)};
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    if (fields.size() != 5) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected 5 tab-separated fields");
    }
    ManifestRecord r{fields[0], fields[1], fields[2], 0, fields[4]};
    try {
      std::size_t pos = 0;
      r.label = std::stoul(fields[3], &pos);
      if (pos != fields[3].size()) throw std::invalid_argument(fields[3]);
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad label '" + fields[3] + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open manifest for writing: " + path.string());
  out << "# id\taudio\tvideo\tlabel\tsplit\n";
  for (const auto& r : records) {
    out << r.id << '\t' << r.audio_path << '\t' << r.video_path << '\t' << r.label << '\t'
        << r.split << '\n';
  }
  if (!out) throw IoError("failed writing manifest: " + path.string());
}

Dataset load_dataset(const std::filesystem::path& data_dir, const std::string& split,
                     const LoadExpectations& expect) {
  const auto manifest = data_dir / "manifest.tsv";
  if (!std::filesystem::exists(manifest)) {
    throw IoError("no manifest.tsv in data directory " + data_dir.string());
  }
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : data_dir / fp;
  };
  Dataset out;
  for (const auto& r : read_manifest(manifest)) {
    if (!split.empty() && r.split != split) continue;
    if (expect.n_classes && r.label >= expect.n_classes) {
      throw IoError(r.id + ": label " + std::to_string(r.label) + " outside [0, " +
                    std::to_string(expect.n_classes) + ")");
    }
    Sample s;
    s.id = r.id;
    s.label = r.label;
    s.split = r.split;
    s.audio = load_features(resolve(r.audio_path));
    s.video = load_features(resolve(r.video_path));
    if (s.audio.modality != Modality::Audio || s.video.modality != Modality::Video) {
      throw IoError(r.id + ": feature files have swapped modality tags");
    }
    if (expect.d_in_audio && s.audio.dim() != expect.d_in_audio) {
      throw IoError(resolve(r.audio_path).string() + ": dim " + std::to_string(s.audio.dim()) +
                    " does not match expected " + std::to_string(expect.d_in_audio));
    }
    if (expect.d_in_video && s.video.dim() != expect.d_in_video) {
      throw IoError(resolve(r.video_path).string() + ": dim " + std::to_string(s.video.dim()) +
                    " does not match expected " + std::to_string(expect.d_in_video));
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(const std::filesystem::path& data_dir, const Dataset& data,
                   const KeyValues& description) {
  std::filesystem::create_directories(data_dir / "features");
  std::vector<ManifestRecord> records;
  records.reserve(data.size());
  for (const auto& s : data) {
    const std::string a = "features/" + s.id + ".audio.feat";
    const std::string v = "features/" + s.id + ".video.feat";
    save_features(data_dir / a, s.audio);
    save_features(data_dir / v, s.video);
    records.push_back({s.id, a, v, s.label, s.split});
  }
  write_manifest(data_dir / "manifest.tsv", records);
  std::ofstream conf(data_dir / "dataset.conf", std::ios::trunc);
  for (const auto& [k, val] : description) conf << k << " = " << val << '\n';
}

Dataset filter_split(const Dataset& data, const std::string& split) {
  Dataset out;
  for (const auto& s : data)
    if (s.split == split) out.push_back(s);
  return out;
}

}  // namespace tarope
