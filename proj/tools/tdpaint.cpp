// tdpaint: train, inpaint, sample, maskgen, eval.
//
// Exit codes: 0 ok, 2 config/usage error, 3 numeric failure, 4 I/O failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "tdpaint/tdpaint.hpp"

namespace {

using namespace tdpaint;

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("TDPAINT_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("TDPAINT_THREADS", "must be a positive integer");
  }
  return 1;
}

fs::path image_path(const fs::path& dir, const Tensor& img) {
  return dir / (channels(img) == 3 ? "output.ppm" : "output.pgm");
}

void write_json(const fs::path& path, const json& j) { detail::write_file(path, j.dump(2) + "\n"); }

struct TrainArgs {
  std::string config, out = "checkpoint", resume, metrics;
};

int cmd_train(const TrainArgs& a) {
  const ExperimentConfig cfg = load_experiment_config(a.config);
  TrainState state;
  if (!a.resume.empty()) {
    Checkpoint ck = load_checkpoint(a.resume);
    if (to_json(ck.config)["model"] != to_json(cfg)["model"] ||
        to_json(ck.config)["dataset"] != to_json(cfg)["dataset"])
      throw ConfigError("resume", "checkpoint model/dataset config differs from --config");
    state = std::move(ck.state);
  } else {
    state = init_train_state(cfg);
  }
  const auto dataset = make_toy_dataset(cfg.dataset);
  const fs::path metrics = a.metrics.empty() ? fs::path(a.out) / "metrics.csv" : fs::path(a.metrics);
  std::ostringstream csv;
  csv << "step,loss,wall_ms\n" << std::setprecision(9);
  const int first = state.step;
  train_loop(cfg, state, dataset, [&](const MetricRow& r) {
    csv << r.step << ',' << r.loss << ',' << r.wall_ms << '\n';
    std::cout << "step " << r.step << "/" << cfg.training.steps << " loss " << r.loss << "\n" << std::flush;
  });
  save_checkpoint(a.out, cfg, state);
  detail::write_file(metrics, csv.str());
  std::cout << "trained steps " << first << ".." << state.step << ", checkpoint " << a.out << "\n";
  return 0;
}

struct InpaintArgs {
  std::string checkpoint, image, mask, method = "tdpaint", out = "out", trace;
  int resample = 1, jump = 1;
  std::uint64_t seed = 0;
  bool literal_renoise = false;
};

int cmd_inpaint(const InpaintArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Tensor image = read_image(a.image);
  const Mask mask = read_mask_pgm(a.mask);
  const UNetConfig& mc = ck.config.model;
  const Shape model_shape{mc.in_channels, ck.config.dataset.image_side, ck.config.dataset.image_side};
  if (image.shape != model_shape)
    throw ConfigError("image", "image shape " + shape_string(image.shape) + " does not match model input shape " +
                                   shape_string(model_shape));
  if (mask.height != height(image) || mask.width != width(image))
    throw ConfigError("mask", "mask shape " + shape_string({mask.height, mask.width}) +
                                  " does not match image shape " + shape_string(image.shape));
  if (mask.all_known()) throw ConfigError("mask", "mask has no unknown pixels");
  SamplerConfig sc;
  try {
    sc.method = parse_method(a.method);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("method", e.what());
  }
  sc.seed = a.seed;
  sc.resample_r = a.resample;
  sc.jump_j = a.jump;
  sc.literal_renoise = a.literal_renoise;
  const ScheduleTable table = ck.config.schedule.build();
  const UNetDenoiser net(ck.state.params, mc);
  const CountingDenoiser<UNetDenoiser> counter(net);
  StepObserver trace;
  if (!a.trace.empty())
    trace = [&](int t, const Tensor& x0_hat) {
      char name[32];
      std::snprintf(name, sizeof name, "x0hat_t%05d.tens", t);
      write_tensor(fs::path(a.trace) / name, x0_hat);
    };
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor out = inpaint(counter, table, image, mask, sc, trace);
  const double wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  const fs::path dir(a.out);
  write_pnm(image_path(dir, out), out);
  write_tensor(dir / "output.tens", out);
  write_json(dir / "sidecar.json", {{"nfe", counter.count()},
                                    {"wall_ms", wall_ms},
                                    {"method", a.method},
                                    {"seed", a.seed},
                                    {"resample_r", a.resample},
                                    {"jump_j", a.jump},
                                    {"T", table.T}});
  std::cout << "nfe " << counter.count() << ", wall_ms " << wall_ms << ", wrote " << image_path(dir, out) << "\n";
  return 0;
}

struct SampleArgs {
  std::string checkpoint, out = "sample";
  std::uint64_t seed = 0;
};

int cmd_sample(const SampleArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const ScheduleTable table = ck.config.schedule.build();
  const UNetDenoiser net(ck.state.params, ck.config.model);
  const CountingDenoiser<UNetDenoiser> counter(net);
  SamplerConfig sc;
  sc.method = Method::ddpm;
  sc.seed = a.seed;
  const int side = ck.config.dataset.image_side;
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor out = ddpm_sample(counter, table, sc, Shape{ck.config.model.in_channels, side, side});
  const double wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  const fs::path dir(a.out);
  write_pnm(image_path(dir, out), out);
  write_tensor(dir / "output.tens", out);
  write_json(dir / "sidecar.json",
             {{"nfe", counter.count()}, {"wall_ms", wall_ms}, {"method", "ddpm"}, {"seed", a.seed}, {"T", table.T}});
  return 0;
}

struct MaskgenArgs {
  std::string family, out;
  int size = 16;
  std::uint64_t seed = 0;
};

MaskFamily family_arg(const std::string& name) {
  try {
    return parse_mask_family(name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("family", e.what());
  }
}

int cmd_maskgen(const MaskgenArgs& a) {
  const MaskFamily f = family_arg(a.family);
  if (a.size < 1) throw ConfigError("size", "must be >= 1");
  Rng rng = Rng::stream(a.seed, "maskgen");
  Mask m;
  try {
    m = make_mask(f, rng, a.size, a.size);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("size", e.what());
  }
  write_mask_pgm(a.out, m);
  std::cout << a.family << " " << a.size << "x" << a.size << ": " << m.known_count() << " known pixels\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, families = "half", out = "report", method = "tdpaint", dump;
  int n = 200, resample = 1, jump = 1, threads = 0, dump_count = 0, diversity_images = 4, diversity_samples = 3;
  std::uint64_t seed = 0;
};

std::vector<MaskFamily> parse_families(const std::string& list) {
  std::vector<MaskFamily> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(family_arg(item));
  if (out.empty()) throw ConfigError("families", "no mask families given");
  return out;
}

int cmd_eval(const EvalArgs& a) {
  const auto families = parse_families(a.families);
  if (a.n < 1) throw ConfigError("n", "must be >= 1");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  EvalOptions opt;
  try {
    opt.sampler.method = parse_method(a.method);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("method", e.what());
  }
  opt.sampler.resample_r = a.resample;
  opt.sampler.jump_j = a.jump;
  opt.n_images = a.n;
  opt.seed = a.seed;
  opt.threads = resolve_threads(a.threads);
  opt.diversity_images = a.diversity_images;
  opt.diversity_samples = a.diversity_samples;
  const ScheduleTable table = ck.config.schedule.build();
  const UNetDenoiser net(ck.state.params, ck.config.model);
  const EvalReport report = run_eval(net, table, ck.config.dataset, families, opt);
  detail::write_file(a.out + ".csv", report.to_csv());
  write_json(a.out + ".json", report.to_json());
  if (!a.dump.empty())
    for (MaskFamily f : families)
      for (int i = 0; i < std::min(a.dump_count, a.n); ++i) {
        const EvalCase c = eval_case(ck.config.dataset, a.seed, a.n, f, i);
        const fs::path d = fs::path(a.dump) / std::string(to_string(f)) / std::to_string(i);
        write_pnm(d / (channels(c.image) == 3 ? "image.ppm" : "image.pgm"), c.image);
        write_tensor(d / "image.tens", c.image);
        write_mask_pgm(d / "mask.pgm", c.mask);
        write_json(d / "case.json", {{"sample_seed", c.sample_seed}, {"index", i}, {"family", to_string(f)}});
      }
  std::cout << report.to_csv();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TD-Paint toy diffusion inpainting"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model from a JSON config");
  train->add_option("--config", ta.config, "Experiment config (JSON)")->required();
  train->add_option("--out", ta.out, "Checkpoint directory");
  train->add_option("--resume", ta.resume, "Checkpoint to continue from");
  train->add_option("--metrics", ta.metrics, "Metrics CSV (default <out>/metrics.csv)");

  InpaintArgs ia;
  auto* inp = app.add_subcommand("inpaint", "Inpaint one image");
  inp->add_option("--checkpoint", ia.checkpoint)->required();
  inp->add_option("--image", ia.image, "PGM/PPM or tensor file")->required();
  inp->add_option("--mask", ia.mask, "Mask PGM, 255 = known")->required();
  inp->add_option("--method", ia.method, "tdpaint | repaint");
  inp->add_option("--resample", ia.resample, "RePaint passes per step");
  inp->add_option("--jump", ia.jump, "RePaint jump length");
  inp->add_option("--seed", ia.seed);
  inp->add_option("--out", ia.out, "Output directory");
  inp->add_option("--trace", ia.trace, "Directory for per-step x0 estimates");
  inp->add_flag("--literal-renoise", ia.literal_renoise, "Re-noise the generated region before each step");

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample", "Unconditional DDPM sample");
  sample->add_option("--checkpoint", sa.checkpoint)->required();
  sample->add_option("--seed", sa.seed);
  sample->add_option("--out", sa.out);

  MaskgenArgs ma;
  auto* maskgen = app.add_subcommand("maskgen", "Write a mask PGM");
  maskgen->add_option("--family", ma.family, std::string(mask_family_names))->required();
  maskgen->add_option("--size", ma.size);
  maskgen->add_option("--seed", ma.seed);
  maskgen->add_option("--out", ma.out)->required();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint per mask family");
  eval->add_option("--checkpoint", ea.checkpoint)->required();
  eval->add_option("--families", ea.families, "Comma-separated mask families");
  eval->add_option("--n", ea.n, "Images per family");
  eval->add_option("--out", ea.out, "Report path prefix (.csv and .json)");
  eval->add_option("--method", ea.method);
  eval->add_option("--resample", ea.resample);
  eval->add_option("--jump", ea.jump);
  eval->add_option("--seed", ea.seed);
  eval->add_option("--threads", ea.threads, "Worker threads (overrides TDPAINT_THREADS)");
  eval->add_option("--diversity-images", ea.diversity_images);
  eval->add_option("--diversity-samples", ea.diversity_samples);
  eval->add_option("--dump", ea.dump, "Directory for per-case image/mask/seed files");
  eval->add_option("--dump-count", ea.dump_count, "Cases per family to dump");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
  }

  try {
    if (*train) return cmd_train(ta);
    if (*inp) return cmd_inpaint(ia);
    if (*sample) return cmd_sample(sa);
    if (*maskgen) return cmd_maskgen(ma);
    if (*eval) return cmd_eval(ea);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::config);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::numeric);
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::io);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
