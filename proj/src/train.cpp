// Copyright 2026 The tarope Authors
// SPDX-License-Identifier: Apache-2.0

#include "tarope/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "tarope/checkpoint.hpp"
#include "tarope/ops.hpp"

namespace tarope {

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0 || eval_batch_size == 0) {
    throw ConfigError("epochs and batch sizes must be positive");
  }
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw ConfigError("lr and weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
    throw ConfigError("AdamW betas must lie in [0, 1) and eps must be positive");
  }
}

void adamw_step(std::span<double> params, std::span<const double> grads, std::span<double> m,
                std::span<double> v, std::size_t step, double lr, const AdamWHyper& hp) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw ShapeError("adamw_step: parameter, gradient and moment sizes differ");
  }
  if (step == 0) throw ContractError("adamw_step: step is 1-based");
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] -= lr * hp.weight_decay * params[i];
    m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * grads[i];
    v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * grads[i] * grads[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + hp.eps);
  }
}

AdamW::AdamW(ParameterSet& params, AdamWHyper hp) : params_(params), hp_(hp) {
  for (const auto& e : params_.entries()) {
    m_.emplace_back(e.tensor.size(), 0.0);
    v_.emplace_back(e.tensor.size(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const auto entries = params_.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor t = entries[i].tensor;
    adamw_step(t.mutable_data(), t.grad(), m_[i], v_[i], t_, lr, hp_);
  }
}

double linear_decay_lr(double lr_init, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) throw ContractError("linear_decay_lr: no steps");
  const double frac = static_cast<double>(std::min(step, total_steps)) /
                      static_cast<double>(total_steps);
  return lr_init * (1.0 - frac);
}

const AffinityMatrix& AffinityCache::get(std::size_t audio_len, std::size_t video_len) {
  const auto key = std::make_pair(audio_len, video_len);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    const auto ta = FeatureSequence::frame_timestamps(audio_len, rates_.eta_audio);
    const auto tv = FeatureSequence::frame_timestamps(video_len, rates_.eta_video);
    it = cache_.emplace(key, gaussian_affinity(ta, tv, sigma_)).first;
  }
  return it->second;
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

namespace {

std::vector<PaddedSample> pad_batch(std::span<const Sample* const> batch) {
  std::size_t ta = 0, tv = 0;
  for (const Sample* s : batch) {
    ta = std::max(ta, s->audio.length());
    tv = std::max(tv, s->video.length());
  }
  std::vector<PaddedSample> out;
  out.reserve(batch.size());
  for (const Sample* s : batch) out.push_back(pad_sample(s->audio, s->video, ta, tv));
  return out;
}

}  // namespace

BatchLoss batch_loss(const FusionModel& model, std::span<const Sample* const> batch,
                     const CtmConfig& ctm, AffinityCache& affinities, const ForwardOptions& opts) {
  if (batch.empty()) throw ContractError("batch_loss: empty batch");
  const auto padded = pad_batch(batch);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<Tensor> cls_terms, ctm_terms;
  BatchLoss out;
  const bool use_ctm = ctm.enabled && ctm.lambda != 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const ForwardOutput fwd = model.forward(padded[b], opts);
    cls_terms.push_back(cross_entropy(fwd.logits, batch[b]->label));
    if (argmax(fwd.logits.data()) == batch[b]->label) ++out.correct;
    if (use_ctm) {
      const CtmEmbeddings emb = embed_for_ctm(fwd.shared_audio, fwd.shared_video, model);
      const AffinityMatrix& aff = affinities.get(padded[b].audio_len, padded[b].video_len);
      ctm_terms.push_back(ctm_loss(emb.audio, emb.video, aff, ctm.tau));
    }
  }
  auto batch_mean = [&](const std::vector<Tensor>& terms) {
    Tensor acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return scale(acc, inv_b);
  };
  const Tensor cls = batch_mean(cls_terms);
  out.cls = cls.item();
  if (use_ctm) {
    const Tensor c = batch_mean(ctm_terms);
    out.ctm = c.item();
    out.total = total_loss(cls, c, ctm.lambda);
  } else {
    out.total = cls;
  }
  return out;
}

TrainRun train(FusionModel& model, const Dataset& train_set, const Dataset* eval_set,
               const TrainConfig& cfg, const CtmConfig& ctm, const TrainHooks& hooks) {
  cfg.validate();
  ctm.validate();
  if (train_set.empty()) throw ContractError("train: empty training set");
  const auto& ec = model.config();
  for (const auto& s : train_set) {
    if (s.audio.dim() != ec.d_in_audio || s.video.dim() != ec.d_in_video) {
      throw ConfigError("train: sample " + s.id + " widths do not match the encoder");
    }
    if (s.label >= ec.n_classes) throw ConfigError("train: sample " + s.id + " label out of range");
  }
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  std::mt19937_64 shuffle_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  AdamW opt(model.parameters(), {cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps});
  AffinityCache affinities(ctm.sigma, ec.rates);

  const std::size_t per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = per_epoch * cfg.epochs;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  TrainRun run;
  run.seed = cfg.seed;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Sample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train_set[order[i]]);
      ++step;
      const double lr = linear_decay_lr(cfg.lr, step, total_steps);

      BatchLoss loss;
      try {
        GradTape tape;
        {
          GradTape::Recording recording(tape);
          ForwardOptions opts;
          opts.training = true;
          opts.rng = &dropout_rng;
          loss = batch_loss(model, batch, ctm, affinities, opts);
        }
        model.parameters().zero_grad();
        tape.backward(loss.total);
        for (const auto& e : model.parameters().entries()) {
          detail::check_finite(e.tensor.grad(), "gradient of " + e.name);
        }
      } catch (const NumericError& err) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step << " (epoch " << epoch << "), batch [";
        for (std::size_t i = 0; i < batch.size(); ++i) msg << (i ? "," : "") << batch[i]->id;
        msg << "]: " << err.what();
        if (loss.total.defined()) msg << "; cls=" << loss.cls << " ctm=" << loss.ctm;
        throw NumericError(msg.str());
      }
      opt.step(lr);

      const StepRecord sr{step, epoch, lr, loss.cls, loss.ctm, loss.total.item()};
      if (!std::isfinite(sr.total_loss)) throw NumericError("non-finite loss at step " + std::to_string(step));
      rec.cls_loss += sr.cls_loss;
      rec.ctm_loss += sr.ctm_loss;
      rec.total_loss += sr.total_loss;
      rec.lr = lr;
      correct += loss.correct;
      if (hooks.on_step) hooks.on_step(sr);
    }
    const double steps = static_cast<double>(per_epoch);
    rec.cls_loss /= steps;
    rec.ctm_loss /= steps;
    rec.total_loss /= steps;
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());

    const bool do_eval = eval_set && !eval_set->empty() &&
                         (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
    const double score =
        do_eval ? evaluate(model, *eval_set, cfg.eval_batch_size).accuracy : rec.train_accuracy;
    if (do_eval) rec.eval_accuracy = score;
    if (do_eval || !eval_set || eval_set->empty()) {
      // Strictly greater: ties keep the earlier epoch.
      if (score > run.best_accuracy) {
        run.best_accuracy = score;
        run.best_epoch = epoch;
        run.best_parameters = model.parameters().snapshot();
        if (!cfg.checkpoint_dir.empty()) {
          run.best_checkpoint = cfg.checkpoint_dir / "best.ckpt";
          save_checkpoint(run.best_checkpoint, model, {{"train.epoch", std::to_string(epoch)}});
        }
      }
      run.final_accuracy = score;
    }
    run.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  if (!cfg.checkpoint_dir.empty()) {
    run.final_checkpoint = cfg.checkpoint_dir / "final.ckpt";
    save_checkpoint(run.final_checkpoint, model, {{"train.epoch", std::to_string(cfg.epochs)}});
  }
  return run;
}

EvalResult evaluate(const FusionModel& model, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw ContractError("evaluate: empty split");
  if (batch_size == 0) throw ConfigError("evaluate: batch_size must be positive");
  const std::size_t classes = model.config().n_classes;
  EvalResult r;
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<const Sample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&data[i]);
    const auto padded = pad_batch(batch);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const std::size_t label = batch[b]->label;
      if (label >= classes) throw ConfigError("evaluate: label out of range for " + batch[b]->id);
      const std::size_t pred = argmax(model.forward(padded[b]).logits.data());
      ++r.confusion[label][pred];
      if (pred == label) ++r.correct;
    }
  }
  r.total = data.size();
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

}  // namespace tarope
