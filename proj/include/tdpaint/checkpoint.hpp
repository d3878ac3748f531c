#pragma once

// Checkpoint directory layout:
//   manifest.json            config, schedule, step, RNG stream labels, parameter shapes
//   weights/<name>.tens      one tensor file per parameter
//   optimizer/m/<name>.tens  Adam first moments
//   optimizer/v/<name>.tens  Adam second moments

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "training.hpp"

namespace tdpaint {

inline constexpr const char* kCheckpointFormat = "tdpaint-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ExperimentConfig config;
  TrainState state;
};

inline json checkpoint_manifest(const ExperimentConfig& cfg, const TrainState& state) {
  json shapes = json::object();
  for (const auto& [name, var] : state.params) shapes[name] = var.shape();
  return json{
      {"format", kCheckpointFormat},
      {"version", kCheckpointVersion},
      {"step", state.step},
      {"adam_step", state.adam.step},
      {"config", to_json(cfg)},
      {"schedule", {{"T", cfg.schedule.T}, {"beta_start", cfg.schedule.beta_start}, {"beta_end", cfg.schedule.beta_end}}},
      {"rng_streams",
       {{"init", "init_parameters(seed = training.seed)"},
        {"batch", "stream(training.seed, \"batch\", step)"},
        {"dataset", "stream(dataset.seed, dataset.kind, index)"}}},
      {"parameters", shapes},
  };
}

inline void save_checkpoint(const fs::path& dir, const ExperimentConfig& cfg, const TrainState& state) {
  detail::write_file(dir / "manifest.json", checkpoint_manifest(cfg, state).dump(2) + "\n");
  for (const auto& [name, var] : state.params) write_tensor(dir / "weights" / (name + ".tens"), var.value());
  for (const auto& [name, m] : state.adam.m) write_tensor(dir / "optimizer" / "m" / (name + ".tens"), m);
  for (const auto& [name, v] : state.adam.v) write_tensor(dir / "optimizer" / "v" / (name + ".tens"), v);
}

inline Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string(), "checkpoint directory not found");
  const fs::path manifest_path = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(detail::read_file(manifest_path));
  } catch (const json::exception& e) {
    throw IoError(manifest_path.string(), std::string("invalid manifest: ") + e.what());
  }
  if (manifest.value("format", "") != kCheckpointFormat)
    throw IoError(manifest_path.string(), "not a tdpaint checkpoint manifest");
  Checkpoint ck;
  try {
    ck.config = parse_experiment_config(manifest.at("config"));
    ck.state.step = manifest.at("step").get<int>();
    ck.state.adam.step = manifest.at("adam_step").get<long long>();
  } catch (const json::exception& e) {
    throw IoError(manifest_path.string(), std::string("invalid manifest: ") + e.what());
  }
  for (const auto& [name, shape] : parameter_shapes(ck.config.model)) {
    Tensor w = read_tensor(dir / "weights" / (name + ".tens"));
    if (w.shape != shape)
      throw IoError((dir / "weights" / (name + ".tens")).string(),
                    "shape " + shape_string(w.shape) + " does not match model " + shape_string(shape));
    ck.state.params.add(name, std::move(w));
    if (ck.state.adam.step > 0) {
      ck.state.adam.m.emplace(name, read_tensor(dir / "optimizer" / "m" / (name + ".tens")));
      ck.state.adam.v.emplace(name, read_tensor(dir / "optimizer" / "v" / (name + ".tens")));
    }
  }
  return ck;
}

}  // namespace tdpaint
