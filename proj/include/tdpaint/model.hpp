#pragma once

// Tiny U-Net noise predictor with per-pixel time conditioning.
//
// Every residual block normalizes its features and modulates them with
//   h_out[c, i, j] = GN(h)[c, i, j] * (1 + L_scale(G[i, j])[c]) + L_shift(G[i, j])[c]
// where G[i, j] = L2(E(tau_l[i, j]) * sigmoid(L1(E(tau_l[i, j])))) and tau_l is the
// time map resized to the block's resolution. A spatially constant time map
// reduces to classic scalar scale-shift conditioning; the scalar entry point
// computes a single embedding row and broadcasts it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "parameters.hpp"
#include "random.hpp"
#include "timemap.hpp"

namespace tdpaint {

struct UNetConfig {
  int in_channels = 1;
  int base_width = 32;
  int depth = 2;  // resolution levels; level l has base_width * 2^l channels
  int time_embed_dim = 64;
  int groups = 0;  // 0 = 8 when channels >= 8, else channels
  int num_res_blocks = 2;

  int level_channels(int level) const { return base_width << level; }

  int groups_for(int c) const {
    const int g = groups > 0 ? groups : (c >= 8 ? 8 : c);
    if (c % g != 0)
      throw std::invalid_argument("group count " + std::to_string(g) + " does not divide " + std::to_string(c) +
                                  " channels");
    return g;
  }

  void validate() const {
    if (in_channels < 1) throw std::invalid_argument("in_channels must be >= 1");
    if (base_width < 1) throw std::invalid_argument("base_width must be >= 1");
    if (depth < 1) throw std::invalid_argument("depth must be >= 1");
    if (num_res_blocks < 1) throw std::invalid_argument("num_res_blocks must be >= 1");
    if (time_embed_dim < 2 || time_embed_dim % 2)
      throw std::invalid_argument("time_embed_dim must be even and >= 2");
    for (int l = 0; l < depth; ++l) {
      groups_for(level_channels(l));
      const int skip = level_channels(l);
      const int below = l == depth - 1 ? level_channels(depth - 1) : level_channels(l + 1);
      groups_for(skip + below);
    }
  }

  void check_input(int c, int h, int w) const {
    if (c != in_channels)
      throw std::invalid_argument("model expects " + std::to_string(in_channels) + " channels, got " +
                                  std::to_string(c));
    const int div = 1 << depth;
    if (h % div || w % div)
      throw std::invalid_argument("spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                                  " not divisible by 2^depth = " + std::to_string(div));
  }

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

// ------------------------------------------------------------ time embedding

/// Transformer-style frequency embedding, one row per value:
/// [cos(t f_0) .. cos(t f_{d/2-1}), sin(t f_0) .. sin(t f_{d/2-1})],
/// f_k = 10000^(-k / (d/2)).
template <class T>
BasicTensor<T> sinusoidal_embed(const std::vector<float>& t_values, int dim) {
  if (dim < 2 || dim % 2) throw std::invalid_argument("sinusoidal_embed: dim must be even");
  const int half = dim / 2;
  std::vector<double> freqs(static_cast<std::size_t>(half));
  for (int k = 0; k < half; ++k) freqs[k] = std::exp(-std::log(10000.0) * k / half);
  BasicTensor<T> out(Shape{static_cast<int>(t_values.size()), dim});
  for (std::size_t r = 0; r < t_values.size(); ++r) {
    T* row = out.ptr() + r * dim;
    for (int k = 0; k < half; ++k) {
      const double arg = static_cast<double>(t_values[r]) * freqs[k];
      row[k] = static_cast<T>(std::cos(arg));
      row[half + k] = static_cast<T>(std::sin(arg));
    }
  }
  return out;
}

/// G = L2(E * sigmoid(L1(E))), rowwise.
template <class T>
ad::Var<T> time_mlp(const ad::Var<T>& embedding, const BasicParameters<T>& params) {
  auto gate = ad::sigmoid(ad::linear(embedding, params["time.lin1.w"], params["time.lin1.b"]));
  return ad::linear(ad::mul(embedding, gate), params["time.lin2.w"], params["time.lin2.b"]);
}

/// GN(h) * (1 + L_scale(G)) + L_shift(G). `gamma` holds conditioning rows;
/// `row` maps each pixel of h to its row (empty: one row per pixel, or a
/// single broadcast row).
template <class T>
ad::Var<T> scale_shift_norm(const ad::Var<T>& h, const ad::Var<T>& gamma, const BasicParameters<T>& params,
                            const std::string& prefix, int groups, std::vector<int> row = {}) {
  auto normed = ad::group_norm(h, groups, T(1e-5));
  auto s = ad::linear(gamma, params[prefix + ".scale.w"], params[prefix + ".scale.b"]);
  auto b = ad::linear(gamma, params[prefix + ".shift.w"], params[prefix + ".shift.b"]);
  return ad::modulate(normed, s, b, std::move(row));
}

/// Full-resolution conditioning field: one G row per pixel of `tmap`,
/// computed without sharing rows between pixels.
template <class T>
ad::Var<T> gamma_field(const TimeMap& tmap, const BasicParameters<T>& params, int time_embed_dim) {
  std::vector<float> t_values(tmap.values.begin(), tmap.values.end());
  return time_mlp(ad::Var<T>::constant(sinusoidal_embed<T>(t_values, time_embed_dim)), params);
}

// ------------------------------------------------------------ parameters

struct InitOptions {
  bool zero_output_layers = true;  // zero conv2 of each block and the output conv
  bool random_biases = false;
};

namespace detail {

struct ResBlockSpec {
  std::string name;
  int in_c;
  int out_c;
  int level;  // resolution level; depth means the bottleneck
};

inline std::vector<ResBlockSpec> res_blocks(const UNetConfig& cfg) {
  std::vector<ResBlockSpec> blocks;
  int c = cfg.base_width;
  for (int l = 0; l < cfg.depth; ++l) {
    for (int b = 0; b < cfg.num_res_blocks; ++b) {
      blocks.push_back({"enc." + std::to_string(l) + "." + std::to_string(b), c, cfg.level_channels(l), l});
      c = cfg.level_channels(l);
    }
  }
  for (int b = 0; b < 2; ++b) blocks.push_back({"mid." + std::to_string(b), c, c, cfg.depth});
  for (int l = cfg.depth - 1; l >= 0; --l) {
    for (int b = 0; b < cfg.num_res_blocks; ++b) {
      const int in_c = b == 0 ? c + cfg.level_channels(l) : cfg.level_channels(l);
      blocks.push_back({"dec." + std::to_string(l) + "." + std::to_string(b), in_c, cfg.level_channels(l), l});
    }
    c = cfg.level_channels(l);
  }
  return blocks;
}

}  // namespace detail

/// Name -> shape for every parameter of the configured network.
inline std::map<std::string, Shape> parameter_shapes(const UNetConfig& cfg) {
  cfg.validate();
  const int d = cfg.time_embed_dim;
  std::map<std::string, Shape> shapes;
  auto conv = [&](const std::string& n, int out, int in, int k) {
    shapes[n + ".w"] = {out, in, k, k};
    shapes[n + ".b"] = {out};
  };
  auto lin = [&](const std::string& n, int out, int in) {
    shapes[n + ".w"] = {out, in};
    shapes[n + ".b"] = {out};
  };
  lin("time.lin1", d, d);
  lin("time.lin2", d, d);
  conv("in_conv", cfg.base_width, cfg.in_channels, 3);
  for (const auto& blk : detail::res_blocks(cfg)) {
    conv(blk.name + ".conv1", blk.out_c, blk.in_c, 3);
    conv(blk.name + ".conv2", blk.out_c, blk.out_c, 3);
    lin(blk.name + ".scale", blk.out_c, d);
    lin(blk.name + ".shift", blk.out_c, d);
    if (blk.in_c != blk.out_c) conv(blk.name + ".skip", blk.out_c, blk.in_c, 1);
  }
  conv("out_conv", cfg.in_channels, cfg.base_width, 3);
  return shapes;
}

/// Deterministic initialization from `seed`: weights uniform in
/// +-1/sqrt(fan_in), drawn in parameter-name order.
template <class T = float>
BasicParameters<T> init_parameters(const UNetConfig& cfg, std::uint64_t seed, const InitOptions& opt = {}) {
  Rng rng = Rng::stream(seed, "init");
  BasicParameters<T> params;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    BasicTensor<T> t(shape);
    const bool is_bias = name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
    const bool zeroed = opt.zero_output_layers &&
                        (name.rfind("out_conv", 0) == 0 || name.find(".conv2.") != std::string::npos);
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= static_cast<std::size_t>(shape[i]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data) {
      const double r = rng.uniform(-1.0, 1.0);  // always drawn so streams line up across options
      if (zeroed) continue;
      if (is_bias && !opt.random_biases) continue;
      v = static_cast<T>(r * (is_bias ? 0.1 : bound));
    }
    params.add(name, std::move(t));
  }
  return params;
}

// ------------------------------------------------------------ forward

namespace detail {

// Conditioning rows for one resolution. A row depends only on the time
// value, so pixels sharing a value share a row: the resized time map is
// reduced to its distinct values plus a pixel -> row index. Scalar
// conditioning is the single-row case.
template <class T>
struct Conditioning {
  ad::Var<T> rows;
  std::vector<int> index;
};

template <class T>
class GammaCache {
 public:
  GammaCache(const BasicParameters<T>& params, const UNetConfig& cfg, const TimeMap* tmap, int scalar_t)
      : params_(params), cfg_(cfg), tmap_(tmap), scalar_t_(scalar_t) {}

  const Conditioning<T>& at(int h, int w) {
    const long key = static_cast<long>(h) * 100000 + w;
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    std::vector<float> distinct;
    std::vector<int> index;
    if (tmap_) {
      const auto field = downscale_timemap(*tmap_, h, w).values;
      distinct = field;
      std::sort(distinct.begin(), distinct.end());
      distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
      index.resize(field.size());
      for (std::size_t p = 0; p < field.size(); ++p)
        index[p] = static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), field[p]) - distinct.begin());
    } else {
      distinct = {static_cast<float>(scalar_t_)};
      index.assign(static_cast<std::size_t>(h) * w, 0);
    }
    auto emb = ad::Var<T>::constant(sinusoidal_embed<T>(distinct, cfg_.time_embed_dim));
    return cache_.emplace(key, Conditioning<T>{time_mlp(emb, params_), std::move(index)}).first->second;
  }

 private:
  const BasicParameters<T>& params_;
  const UNetConfig& cfg_;
  const TimeMap* tmap_;
  int scalar_t_;
  std::map<long, Conditioning<T>> cache_;
};

template <class T>
ad::Var<T> conv(const ad::Var<T>& x, const BasicParameters<T>& p, const std::string& name, int k) {
  return ad::conv2d(x, p[name + ".w"], p[name + ".b"], (k - 1) / 2);
}

template <class T>
ad::Var<T> res_block(const ad::Var<T>& x, const ResBlockSpec& blk, const BasicParameters<T>& p,
                     const UNetConfig& cfg, GammaCache<T>& gammas) {
  const auto& xv = x.value();
  auto h = conv(ad::silu(ad::group_norm(x, cfg.groups_for(blk.in_c), T(1e-5))), p, blk.name + ".conv1", 3);
  const auto& cond = gammas.at(xv.dim(1), xv.dim(2));
  h = scale_shift_norm(h, cond.rows, p, blk.name, cfg.groups_for(blk.out_c), cond.index);
  h = conv(ad::silu(h), p, blk.name + ".conv2", 3);
  auto skip = blk.in_c == blk.out_c ? x : conv(x, p, blk.name + ".skip", 1);
  return ad::add(skip, h);
}

template <class T>
ad::Var<T> unet_forward_impl(const ad::Var<T>& x, const BasicParameters<T>& p, const UNetConfig& cfg,
                             GammaCache<T>& gammas) {
  const auto blocks = res_blocks(cfg);
  std::size_t bi = 0;
  auto h = conv(x, p, "in_conv", 3);
  std::vector<ad::Var<T>> skips;
  for (int l = 0; l < cfg.depth; ++l) {
    for (int b = 0; b < cfg.num_res_blocks; ++b) h = res_block(h, blocks[bi++], p, cfg, gammas);
    skips.push_back(h);
    h = ad::avg_pool2(h);
  }
  for (int b = 0; b < 2; ++b) h = res_block(h, blocks[bi++], p, cfg, gammas);
  for (int l = cfg.depth - 1; l >= 0; --l) {
    h = ad::concat_channels(ad::upsample2(h), skips[static_cast<std::size_t>(l)]);
    for (int b = 0; b < cfg.num_res_blocks; ++b) h = res_block(h, blocks[bi++], p, cfg, gammas);
  }
  h = ad::silu(ad::group_norm(h, cfg.groups_for(cfg.base_width), T(1e-5)));
  return conv(h, p, "out_conv", 3);
}

}  // namespace detail

/// Noise prediction eps(x, tau) with per-pixel time conditioning.
template <class T>
ad::Var<T> unet_forward(const ad::Var<T>& x, const TimeMap& tmap, const BasicParameters<T>& params,
                        const UNetConfig& cfg) {
  const auto& xv = x.value();
  require_image(xv, "unet_forward");
  cfg.check_input(xv.dim(0), xv.dim(1), xv.dim(2));
  if (tmap.height != xv.dim(1) || tmap.width != xv.dim(2))
    throw std::invalid_argument("time map " + std::to_string(tmap.height) + "x" + std::to_string(tmap.width) +
                                " does not match input " + shape_string(xv.shape));
  detail::GammaCache<T> gammas(params, cfg, &tmap, 0);
  return detail::unet_forward_impl(x, params, cfg, gammas);
}

/// Classic scalar-t conditioning: one embedding row broadcast over pixels.
template <class T>
ad::Var<T> unet_forward_scalar(const ad::Var<T>& x, int t, const BasicParameters<T>& params,
                               const UNetConfig& cfg) {
  const auto& xv = x.value();
  require_image(xv, "unet_forward_scalar");
  cfg.check_input(xv.dim(0), xv.dim(1), xv.dim(2));
  detail::GammaCache<T> gammas(params, cfg, nullptr, t);
  return detail::unet_forward_impl(x, params, cfg, gammas);
}

/// Inference wrapper: no graph is recorded.
inline Tensor predict_noise(const Tensor& x, const TimeMap& tmap, const Parameters& params, const UNetConfig& cfg) {
  ad::NoGradGuard guard;
  return unet_forward(ad::Var<float>::constant(x), tmap, params, cfg).value();
}

inline Tensor predict_noise_scalar(const Tensor& x, int t, const Parameters& params, const UNetConfig& cfg) {
  ad::NoGradGuard guard;
  return unet_forward_scalar(ad::Var<float>::constant(x), t, params, cfg).value();
}

}  // namespace tdpaint
