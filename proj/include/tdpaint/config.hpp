#pragma once

// JSON experiment configs. Errors carry the dotted path of the offending
// field, e.g. "schedule.T".
//
// {
//   "dataset":  {"kind": "gaussian_blobs", "image_side": 16, "channels": 1, "count": 1024, "seed": 0},
//   "model":    {"base_width": 32, "depth": 2, "time_embed_dim": 64, "groups": 0, "num_res_blocks": 2},
//   "schedule": {"T": 200, "beta_start": 5e-4, "beta_end": 0.1},
//   "training": {"steps": 2000, "batch_size": 8, "lr": 1e-4, "mask_mix": "patch", "seed": 0,
//                "masked_loss": false, "log_interval": 50}
// }
//
// Required: the four sections, dataset.image_side, schedule.T,
// training.steps. Everything else has the defaults shown in the structs.

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "io.hpp"
#include "training.hpp"

namespace tdpaint {

using json = nlohmann::json;

namespace detail {

inline const json& section(const json& root, const std::string& name) {
  if (!root.contains(name)) throw ConfigError(name, "missing required section");
  const json& s = root.at(name);
  if (!s.is_object()) throw ConfigError(name, "must be an object");
  return s;
}

template <class V>
V read_field(const json& sec, const std::string& path, const std::string& key, const V& fallback, bool required) {
  if (!sec.contains(key)) {
    if (required) throw ConfigError(path + "." + key, "missing required field");
    return fallback;
  }
  const json& v = sec.at(key);
  if constexpr (std::is_same_v<V, bool>) {
    if (!v.is_boolean()) throw ConfigError(path + "." + key, "expected a boolean");
  } else if constexpr (std::is_integral_v<V>) {
    if (!v.is_number_integer()) throw ConfigError(path + "." + key, "expected an integer");
    if constexpr (std::is_unsigned_v<V>)
      if (v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(path + "." + key, "must be >= 0");
  } else if constexpr (std::is_floating_point_v<V>) {
    if (!v.is_number()) throw ConfigError(path + "." + key, "expected a number");
  } else {
    if (!v.is_string()) throw ConfigError(path + "." + key, "expected a string");
  }
  return v.get<V>();
}

inline void check(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field, what);
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const json& root) {
  using detail::check;
  using detail::read_field;
  if (!root.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  ExperimentConfig cfg;

  const json& ds = detail::section(root, "dataset");
  const std::string kind = read_field<std::string>(ds, "dataset", "kind", std::string(to_string(cfg.dataset.kind)), false);
  try {
    cfg.dataset.kind = parse_toy_kind(kind);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("dataset.kind", e.what());
  }
  cfg.dataset.image_side = read_field<int>(ds, "dataset", "image_side", 0, true);
  cfg.dataset.channels = read_field<int>(ds, "dataset", "channels", cfg.dataset.channels, false);
  cfg.dataset.count = read_field<int>(ds, "dataset", "count", cfg.dataset.count, false);
  cfg.dataset.seed = read_field<std::uint64_t>(ds, "dataset", "seed", cfg.dataset.seed, false);
  check(cfg.dataset.image_side >= 1, "dataset.image_side", "must be >= 1");
  check(cfg.dataset.channels >= 1, "dataset.channels", "must be >= 1");
  check(cfg.dataset.count >= 1, "dataset.count", "must be >= 1");

  const json& md = detail::section(root, "model");
  cfg.model.in_channels = cfg.dataset.channels;
  if (md.contains("in_channels"))
    check(read_field<int>(md, "model", "in_channels", 0, true) == cfg.dataset.channels, "model.in_channels",
          "must equal dataset.channels");
  cfg.model.base_width = read_field<int>(md, "model", "base_width", cfg.model.base_width, false);
  cfg.model.depth = read_field<int>(md, "model", "depth", cfg.model.depth, false);
  cfg.model.time_embed_dim = read_field<int>(md, "model", "time_embed_dim", cfg.model.time_embed_dim, false);
  cfg.model.groups = read_field<int>(md, "model", "groups", cfg.model.groups, false);
  cfg.model.num_res_blocks = read_field<int>(md, "model", "num_res_blocks", cfg.model.num_res_blocks, false);
  check(cfg.model.groups >= 0, "model.groups", "must be >= 0");
  try {
    cfg.model.validate();
    cfg.model.check_input(cfg.model.in_channels, cfg.dataset.image_side, cfg.dataset.image_side);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("model", e.what());
  }

  const json& sc = detail::section(root, "schedule");
  cfg.schedule.T = read_field<int>(sc, "schedule", "T", 0, true);
  cfg.schedule.beta_start = read_field<double>(sc, "schedule", "beta_start", cfg.schedule.beta_start, false);
  cfg.schedule.beta_end = read_field<double>(sc, "schedule", "beta_end", cfg.schedule.beta_end, false);
  check(cfg.schedule.T >= 1, "schedule.T", "must be >= 1");
  check(cfg.schedule.beta_start > 0.0, "schedule.beta_start", "must be > 0");
  check(cfg.schedule.beta_end >= cfg.schedule.beta_start, "schedule.beta_end", "must be >= beta_start");
  check(cfg.schedule.beta_end < 1.0, "schedule.beta_end", "must be < 1");

  const json& tr = detail::section(root, "training");
  cfg.training.steps = read_field<int>(tr, "training", "steps", 0, true);
  cfg.training.batch_size = read_field<int>(tr, "training", "batch_size", cfg.training.batch_size, false);
  cfg.training.lr = read_field<double>(tr, "training", "lr", cfg.training.lr, false);
  const std::string mix =
      read_field<std::string>(tr, "training", "mask_mix", std::string(to_string(cfg.training.mask_mix)), false);
  try {
    cfg.training.mask_mix = parse_mask_mix(mix);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("training.mask_mix", e.what());
  }
  cfg.training.seed = read_field<std::uint64_t>(tr, "training", "seed", cfg.training.seed, false);
  cfg.training.masked_loss = read_field<bool>(tr, "training", "masked_loss", cfg.training.masked_loss, false);
  cfg.training.log_interval = read_field<int>(tr, "training", "log_interval", cfg.training.log_interval, false);
  check(cfg.training.steps >= 1, "training.steps", "must be >= 1");
  check(cfg.training.batch_size >= 1, "training.batch_size", "must be >= 1");
  check(cfg.training.lr > 0.0, "training.lr", "must be > 0");
  check(cfg.training.log_interval >= 1, "training.log_interval", "must be >= 1");
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  const std::string text = detail::read_file(path);
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON in ") + path.string() + ": " + e.what());
  }
  return parse_experiment_config(root);
}

/// Fully expanded config; parse_experiment_config(to_json(c)) == c.
inline json to_json(const ExperimentConfig& c) {
  return json{
      {"dataset",
       {{"kind", to_string(c.dataset.kind)},
        {"image_side", c.dataset.image_side},
        {"channels", c.dataset.channels},
        {"count", c.dataset.count},
        {"seed", c.dataset.seed}}},
      {"model",
       {{"in_channels", c.model.in_channels},
        {"base_width", c.model.base_width},
        {"depth", c.model.depth},
        {"time_embed_dim", c.model.time_embed_dim},
        {"groups", c.model.groups},
        {"num_res_blocks", c.model.num_res_blocks}}},
      {"schedule", {{"T", c.schedule.T}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}}},
      {"training",
       {{"steps", c.training.steps},
        {"batch_size", c.training.batch_size},
        {"lr", c.training.lr},
        {"mask_mix", to_string(c.training.mask_mix)},
        {"seed", c.training.seed},
        {"masked_loss", c.training.masked_loss},
        {"log_interval", c.training.log_interval}}},
  };
}

}  // namespace tdpaint
