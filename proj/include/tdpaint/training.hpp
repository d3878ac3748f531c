#pragma once

// Pixel-wise noise training. Each example gets a two-level time map (known
// region at time 0, unknown region at a uniformly drawn t), is diffused per
// pixel, and the network is regressed onto the drawn noise.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "random.hpp"
#include "schedule.hpp"
#include "timemap.hpp"

namespace tdpaint {

/// Where training masks come from: patch partitions, random brush/box
/// masks, or a 50/50 per-example mix of the two.
enum class MaskMix { patch, brush, mix };

inline std::string_view to_string(MaskMix m) {
  switch (m) {
    case MaskMix::patch: return "patch";
    case MaskMix::brush: return "brush";
    case MaskMix::mix: return "mix";
  }
  return "?";
}

inline MaskMix parse_mask_mix(std::string_view s) {
  if (s == "patch") return MaskMix::patch;
  if (s == "brush") return MaskMix::brush;
  if (s == "mix") return MaskMix::mix;
  throw std::invalid_argument("unknown mask_mix '" + std::string(s) + "' (valid: patch, brush, mix)");
}

struct TrainConfig {
  int steps = 1000;
  int batch_size = 8;
  double lr = 1e-4;
  MaskMix mask_mix = MaskMix::patch;
  std::uint64_t seed = 0;
  bool masked_loss = false;  // restrict the loss to unknown pixels
  int log_interval = 50;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    if (log_interval < 1) throw std::invalid_argument("log_interval must be >= 1");
  }
};

struct ScheduleConfig {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  ScheduleTable build() const { return build_schedule(T, beta_start, beta_end); }
};

/// Everything a training run depends on.
struct ExperimentConfig {
  ToyDatasetSpec dataset;
  UNetConfig model;
  ScheduleConfig schedule;
  TrainConfig training;
};

struct TrainState {
  Parameters params;
  AdamState adam;
  int step = 0;  // optimizer steps completed
};

inline TrainState init_train_state(const ExperimentConfig& cfg) {
  return TrainState{init_parameters<float>(cfg.model, cfg.training.seed), AdamState{}, 0};
}

/// Training example: diffused input, its time map and mask, and the target noise.
struct TrainExample {
  Tensor x_tau;
  Tensor noise;
  TimeMap tmap;
  Mask mask;
};

inline TrainExample draw_example(const Tensor& x0, Rng& rng, const ScheduleTable& table, MaskMix mix) {
  const int h = height(x0), w = width(x0);
  const int t_unknown = rng.uniform_int(1, table.T);
  const bool use_brush = mix == MaskMix::brush || (mix == MaskMix::mix && rng.bernoulli(0.5));
  TrainExample ex;
  if (use_brush) {
    ex.mask = gen_box_brush(rng, h, w, rng.uniform(0.05, 0.7));
    ex.tmap = generation_timemap(ex.mask, t_unknown);
  } else {
    auto drawn = sample_train_timemap(rng, h, w, table.T, t_unknown);
    ex.tmap = std::move(drawn.tmap);
    ex.mask = std::move(drawn.mask);
  }
  ex.noise = rng.normal_tensor(x0.shape);
  ex.x_tau = forward_diffuse_pixelwise(x0, ex.tmap, ex.noise, table);
  return ex;
}

/// Batch loss (mean over examples of the per-example MSE) as a graph node.
inline ad::Var<float> batch_loss(const Parameters& params, const std::vector<Tensor>& batch, Rng& rng,
                                 const ScheduleTable& table, const UNetConfig& model, const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  ad::Var<float> total;
  for (const Tensor& x0 : batch) {
    TrainExample ex = draw_example(x0, rng, table, cfg.mask_mix);
    auto pred = unet_forward(ad::Var<float>::constant(std::move(ex.x_tau)), ex.tmap, params, model);
    auto target = ad::Var<float>::constant(std::move(ex.noise));
    auto loss = cfg.masked_loss ? ad::masked_mse_loss(pred, target, ex.mask.unknown_selector())
                                : ad::mse_loss(pred, target);
    total = total ? ad::add(total, loss) : loss;
  }
  return ad::scale(total, 1.0f / static_cast<float>(batch.size()));
}

/// One optimizer step; returns the batch loss before the update.
inline double train_step(Parameters& params, AdamState& adam, const std::vector<Tensor>& batch, Rng& rng,
                         const ScheduleTable& table, const UNetConfig& model, const TrainConfig& cfg) {
  params.zero_grad();
  auto loss = batch_loss(params, batch, rng, table, model, cfg);
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError(static_cast<int>(adam.step), "non-finite training loss");
  ad::backward(loss);
  adam_step(params, adam, AdamOptions{cfg.lr});
  return value;
}

struct MetricRow {
  int step = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

/// Runs optimizer steps state.step .. cfg.training.steps - 1. Step s draws
/// its batch and noise from the stream (seed, "batch", s), so a run resumed
/// from a saved state continues exactly as an uninterrupted one. A metrics
/// row is emitted at every step divisible by log_interval.
inline std::vector<MetricRow> train_loop(const ExperimentConfig& cfg, TrainState& state,
                                         const std::vector<Tensor>& dataset,
                                         const std::function<void(const MetricRow&)>& on_log = {}) {
  cfg.training.validate();
  cfg.model.validate();
  if (dataset.empty()) throw std::invalid_argument("empty dataset");
  const ScheduleTable table = cfg.schedule.build();
  const auto start = std::chrono::steady_clock::now();
  std::vector<MetricRow> rows;
  std::vector<Tensor> batch(static_cast<std::size_t>(cfg.training.batch_size));
  for (; state.step < cfg.training.steps; ++state.step) {
    Rng rng = Rng::stream(cfg.training.seed, "batch", static_cast<std::uint64_t>(state.step));
    for (auto& img : batch) img = dataset[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(dataset.size()) - 1))];
    double loss = 0.0;
    try {
      loss = train_step(state.params, state.adam, batch, rng, table, cfg.model, cfg.training);
    } catch (const NumericError& e) {
      throw NumericError(state.step, "non-finite training loss");
    }
    if (state.step % cfg.training.log_interval == 0) {
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      rows.push_back({state.step, loss, ms});
      if (on_log) on_log(rows.back());
    }
  }
  return rows;
}

}  // namespace tdpaint
