// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tarope/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include "tarope/checkpoint.hpp"
#include "tarope/ctm.hpp"
#include "tarope/ops.hpp"

namespace tarope {

std::vector<double> min_max_normalize(std::span<const double> values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - lo) / (hi - lo);
  // Pin the extremes so affine rescaling of the input cannot perturb them.
  out[static_cast<std::size_t>(lo_it - values.begin())] = 0.0;
  out[static_cast<std::size_t>(hi_it - values.begin())] = 1.0;
  return out;
}

Series magnitude_trajectory(const Tensor& frames, double fps) {
  if (frames.rank() != 2 || frames.rows() == 0) {
    throw ShapeError("magnitude_trajectory: need a [T x d] tensor with T >= 1");
  }
  if (!(fps > 0.0)) throw ConfigError("magnitude_trajectory: fps must be positive");
  const std::size_t t = frames.rows(), d = frames.cols();
  std::vector<double> norms(t);
  for (std::size_t i = 0; i < t; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += frames.at(i, j) * frames.at(i, j);
    norms[i] = std::sqrt(s);
  }
  return {min_max_normalize(norms), FeatureSequence::frame_timestamps(t, fps)};
}

std::vector<double> resample_nearest(const Series& fine, std::span<const double> coarse_times) {
  const auto& ts = fine.timestamps;
  if (ts.empty() || ts.size() != fine.values.size()) {
    throw ShapeError("resample_nearest: series values and timestamps differ in length");
  }
  std::vector<double> out;
  out.reserve(coarse_times.size());
  for (double t : coarse_times) {
    auto it = std::lower_bound(ts.begin(), ts.end(), t);
    std::size_t idx;
    if (it == ts.end()) {
      idx = ts.size() - 1;
    } else if (it == ts.begin()) {
      idx = 0;
    } else {
      const auto hi = static_cast<std::size_t>(it - ts.begin());
      idx = (t - ts[hi - 1] <= ts[hi] - t) ? hi - 1 : hi;
    }
    out.push_back(fine.values[idx]);
  }
  return out;
}

namespace {

int sign_of(double x) { return (x > 0.0) - (x < 0.0); }

void check_series(const Series& s, const char* which) {
  if (s.values.size() < 2) {
    throw ContractError(std::string("sign_agreement: ") + which + " series needs at least 2 points");
  }
  if (s.timestamps.size() != s.values.size()) {
    throw ShapeError(std::string("sign_agreement: ") + which + " timestamps do not match values");
  }
}

}  // namespace

double sign_agreement(const Series& audio, const Series& video) {
  check_series(audio, "audio");
  check_series(video, "video");
  std::vector<double> a, v;
  if (audio.values.size() > video.values.size()) {
    a = resample_nearest(audio, video.timestamps);
    v = video.values;
  } else if (video.values.size() > audio.values.size()) {
    a = audio.values;
    v = resample_nearest(video, audio.timestamps);
  } else {
    a = resample_nearest(audio, video.timestamps);
    v = video.values;
  }
  std::size_t agree = 0;
  for (std::size_t i = 1; i < a.size(); ++i) {
    if (sign_of(a[i] - a[i - 1]) == sign_of(v[i] - v[i - 1])) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(a.size() - 1);
}

FeatureTap parse_tap(std::string_view name) {
  if (name == "ctm") return FeatureTap::Ctm;
  if (name == "shared") return FeatureTap::Shared;
  throw ConfigError("unknown feature tap '" + std::string(name) + "' (expected ctm or shared)");
}

std::string_view to_string(FeatureTap tap) { return tap == FeatureTap::Ctm ? "ctm" : "shared"; }

TrajectoryReport sample_trajectory(const FusionModel& model, const Sample& sample, FeatureTap tap) {
  const auto [sa, sv] = model.project_inputs(sample.audio, sample.video);
  Tensor fa = sa, fv = sv;
  if (tap == FeatureTap::Ctm) {
    const CtmEmbeddings emb = embed_for_ctm(sa, sv, model);
    fa = emb.raw_audio;
    fv = emb.raw_video;
  }
  return {sample.id, magnitude_trajectory(fa, sample.audio.fps),
          magnitude_trajectory(fv, sample.video.fps)};
}

void fill_histogram(AgreementDistribution& dist, std::size_t bins) {
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  dist.bin_edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    dist.bin_edges[i] = static_cast<double>(i) / static_cast<double>(bins);
  }
  std::vector<std::size_t> counts(bins, 0);
  for (double x : dist.agreement) {
    auto b = static_cast<std::size_t>(std::floor(x * static_cast<double>(bins)));
    ++counts[std::min(b, bins - 1)];
  }
  dist.mass.assign(bins, 0.0);
  const double n = static_cast<double>(dist.agreement.size());
  if (n > 0) {
    for (std::size_t i = 0; i < bins; ++i) dist.mass[i] = static_cast<double>(counts[i]) / n;
  }
  if (dist.agreement.empty()) {
    dist.mean = dist.median = 0.0;
    return;
  }
  dist.mean = std::accumulate(dist.agreement.begin(), dist.agreement.end(), 0.0) / n;
  std::vector<double> sorted = dist.agreement;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  dist.median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
}

AgreementDistribution agreement_distribution(const FusionModel& model, const Dataset& data,
                                             std::string label, FeatureTap tap, std::size_t bins,
                                             std::size_t threads) {
  if (data.empty()) throw ContractError("agreement_distribution: empty dataset");
  AgreementDistribution dist;
  dist.model = std::move(label);
  dist.agreement.assign(data.size(), 0.0);
  for (const auto& s : data) dist.sample_ids.push_back(s.id);

  const std::size_t workers = std::clamp<std::size_t>(threads, 1, data.size());
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < data.size(); i += workers) {
        const auto tr = sample_trajectory(model, data[i], tap);
        dist.agreement[i] = sign_agreement(tr.audio, tr.video);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  fill_histogram(dist, bins);
  return dist;
}

AgreementReport dataset_agreement_report(const std::filesystem::path& checkpoint_a,
                                         const std::filesystem::path& checkpoint_b,
                                         const Dataset& data, FeatureTap tap, std::size_t bins,
                                         std::size_t threads) {
  if (data.empty()) throw ContractError("dataset_agreement_report: empty dataset");
  for (const auto& p : {checkpoint_a, checkpoint_b}) {
    if (!std::filesystem::exists(p)) throw IoError("checkpoint not found: " + p.string());
  }
  const auto a = load_checkpoint(checkpoint_a);
  const auto b = load_checkpoint(checkpoint_b);
  return {agreement_distribution(a.model, data, "A", tap, bins, threads),
          agreement_distribution(b.model, data, "B", tap, bins, threads)};
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  return out;
}

}  // namespace

void write_trajectory_csv(const std::filesystem::path& path, const TrajectoryReport& report) {
  auto out = open_csv(path);
  const auto video_on_audio = resample_nearest(report.video, report.audio.timestamps);
  out << "t,audio_mag,video_mag\n";
  for (std::size_t i = 0; i < report.audio.values.size(); ++i) {
    out << report.audio.timestamps[i] << ',' << report.audio.values[i] << ','
        << video_on_audio[i] << '\n';
  }
}

void write_histogram_csv(const std::filesystem::path& path,
                         const std::vector<const AgreementDistribution*>& dists) {
  auto out = open_csv(path);
  out << "model,bin_low,bin_high,mass\n";
  for (const auto* d : dists) {
    for (std::size_t i = 0; i < d->mass.size(); ++i) {
      out << d->model << ',' << d->bin_edges[i] << ',' << d->bin_edges[i + 1] << ',' << d->mass[i]
          << '\n';
    }
  }
}

void write_summary_csv(const std::filesystem::path& path,
                       const std::vector<const AgreementDistribution*>& dists) {
  auto out = open_csv(path);
  out << "model,mean,median,n\n";
  for (const auto* d : dists) {
    out << d->model << ',' << d->mean << ',' << d->median << ',' << d->agreement.size() << '\n';
  }
}

void write_agreement_csv(const std::filesystem::path& path,
                         const std::vector<const AgreementDistribution*>& dists) {
  auto out = open_csv(path);
  out << "model,sample_id,agreement\n";
  for (const auto* d : dists) {
    for (std::size_t i = 0; i < d->agreement.size(); ++i) {
      out << d->model << ',' << d->sample_ids[i] << ',' << d->agreement[i] << '\n';
    }
  }
}

}  // namespace tarope
