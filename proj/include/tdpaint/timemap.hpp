#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "random.hpp"

namespace tdpaint {

/// Per-pixel integer diffusion time, row-major h x w.
struct TimeMap {
  int height = 0;
  int width = 0;
  std::vector<int> values;

  TimeMap() = default;
  TimeMap(int h, int w, int fill = 0) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  int& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  int at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }

  void check_range(int T) const {
    for (int v : values)
      if (v < 0 || v > T)
        throw std::out_of_range("time map entry " + std::to_string(v) + " outside [0, " + std::to_string(T) + "]");
  }
  friend bool operator==(const TimeMap&, const TimeMap&) = default;
};

/// Binary inpainting mask: 1 = known (condition), 0 = unknown (to generate).
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }

  std::size_t known_count() const {
    return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
  }
  std::size_t unknown_count() const { return values.size() - known_count(); }
  bool all_known() const { return unknown_count() == 0; }
  bool is_constant() const { return known_count() == 0 || unknown_count() == 0; }

  std::vector<std::uint8_t> unknown_selector() const {
    std::vector<std::uint8_t> sel(values.size());
    for (std::size_t i = 0; i < sel.size(); ++i) sel[i] = values[i] ? 0 : 1;
    return sel;
  }
  friend bool operator==(const Mask&, const Mask&) = default;
};

/// Real-valued h x w field (downscaled time maps).
struct Field {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// ------------------------------------------------------------ training maps

/// Patch sizes 2^i that tile an h x w grid.
inline std::vector<int> valid_patch_sizes(int h, int w) {
  std::vector<int> sizes;
  for (int p = 1; p <= w && p <= h; p *= 2)
    if (h % p == 0 && w % p == 0) sizes.push_back(p);
  return sizes;
}

struct TrainTimeMap {
  TimeMap tmap;
  Mask mask;
  int patch_size = 0;
  int known_patches = 0;
  int total_patches = 0;
};

/// Patch partition with a given patch size and known fraction. The number of
/// known patches is floor(fraction * n), capped at n - 1 so at least one
/// patch stays unknown; the known subset is uniformly random.
inline TrainTimeMap make_patch_timemap(Rng& rng, int h, int w, int patch, double known_fraction, int T,
                                       int t_unknown) {
  if (t_unknown < 1 || t_unknown > T)
    throw std::out_of_range("t_unknown " + std::to_string(t_unknown) + " outside [1, " + std::to_string(T) + "]");
  if (patch < 1 || h % patch || w % patch)
    throw std::invalid_argument("patch size " + std::to_string(patch) + " does not tile " + std::to_string(h) + "x" +
                                std::to_string(w));
  const int py = h / patch, px = w / patch, n = py * px;
  const int k = std::min(static_cast<int>(std::floor(std::clamp(known_fraction, 0.0, 1.0) * n)), n - 1);

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());

  TrainTimeMap out{TimeMap(h, w, t_unknown), Mask(h, w, 0), patch, k, n};
  for (int i = 0; i < k; ++i) {
    const int oy = (order[i] / px) * patch, ox = (order[i] % px) * patch;
    for (int y = oy; y < oy + patch; ++y)
      for (int x = ox; x < ox + patch; ++x) {
        out.tmap.at(y, x) = 0;
        out.mask.at(y, x) = 1;
      }
  }
  return out;
}

/// Training time map: uniform patch size among the valid powers of two,
/// uniform known fraction in [0, 1], known patches at time 0 and the rest at
/// t_unknown.
inline TrainTimeMap sample_train_timemap(Rng& rng, int h, int w, int T, int t_unknown) {
  if (t_unknown < 1 || t_unknown > T)
    throw std::out_of_range("t_unknown " + std::to_string(t_unknown) + " outside [1, " + std::to_string(T) + "]");
  const auto sizes = valid_patch_sizes(h, w);
  if (sizes.empty()) throw std::invalid_argument("no valid patch size");
  const int patch = sizes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(sizes.size()) - 1))];
  const double fraction = rng.uniform();
  return make_patch_timemap(rng, h, w, patch, fraction, T, t_unknown);
}

// ---------------------------------------------------------- generation maps

/// 0 on known pixels, t on unknown pixels.
inline TimeMap generation_timemap(const Mask& mask, int t) {
  if (t < 0) throw std::out_of_range("generation_timemap: negative t");
  TimeMap out(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.values.size(); ++i) out.values[i] = mask.values[i] ? 0 : t;
  return out;
}

/// Bilinear resize with half-pixel centers (align_corners = false).
/// Interpolation is written as a + w (b - a) so a constant map stays exact.
inline Field downscale_timemap(const TimeMap& tmap, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("downscale_timemap: zero target size");
  if (out_h > tmap.height || out_w > tmap.width)
    throw std::invalid_argument("downscale_timemap: target larger than source");
  auto coord = [](int d, int in, int out, int& i0, int& i1, float& frac) {
    const double scale = static_cast<double>(in) / out;
    double src = (d + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<int>(std::floor(src));
    i1 = std::min(i0 + 1, in - 1);
    frac = static_cast<float>(src - i0);
  };
  Field out{out_h, out_w, std::vector<float>(static_cast<std::size_t>(out_h) * out_w)};
  for (int y = 0; y < out_h; ++y) {
    int y0, y1;
    float fy;
    coord(y, tmap.height, out_h, y0, y1, fy);
    for (int x = 0; x < out_w; ++x) {
      int x0, x1;
      float fx;
      coord(x, tmap.width, out_w, x0, x1, fx);
      const float a = static_cast<float>(tmap.at(y0, x0));
      const float b = static_cast<float>(tmap.at(y0, x1));
      const float c = static_cast<float>(tmap.at(y1, x0));
      const float d = static_cast<float>(tmap.at(y1, x1));
      const float top = a + fx * (b - a);
      const float bottom = c + fx * (d - c);
      out.values[static_cast<std::size_t>(y) * out_w + x] = top + fy * (bottom - top);
    }
  }
  return out;
}

// ---------------------------------------------------------------- masks

inline void require_even(int h, int w, const char* family) {
  if (h % 2 || w % 2)
    throw std::invalid_argument(std::string(family) + " mask needs even dimensions, got " + std::to_string(h) + "x" +
                                std::to_string(w));
}

/// Left half known, right half removed.
inline Mask gen_half(int h, int w) {
  require_even(h, w, "half");
  Mask m(h, w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w / 2; ++x) m.at(y, x) = 1;
  return m;
}

/// Keeps pixels with even row and even column index.
inline Mask gen_super_resolve_2x(int h, int w) {
  require_even(h, w, "sr2x");
  Mask m(h, w, 0);
  for (int y = 0; y < h; y += 2)
    for (int x = 0; x < w; x += 2) m.at(y, x) = 1;
  return m;
}

/// Keeps even rows, removes odd rows.
inline Mask gen_altern_lines(int h, int w) {
  require_even(h, w, "lines");
  Mask m(h, w, 0);
  for (int y = 0; y < h; y += 2)
    for (int x = 0; x < w; ++x) m.at(y, x) = 1;
  return m;
}

/// Keeps a centered keep x keep square.
inline Mask gen_expand(int h, int w, int keep) {
  if (keep < 1) throw std::invalid_argument("expand: keep must be >= 1");
  if (keep >= std::min(h, w))
    throw std::invalid_argument("expand: keep " + std::to_string(keep) + " must be smaller than " +
                                std::to_string(std::min(h, w)));
  Mask m(h, w, 0);
  const int oy = (h - keep) / 2, ox = (w - keep) / 2;
  for (int y = oy; y < oy + keep; ++y)
    for (int x = ox; x < ox + keep; ++x) m.at(y, x) = 1;
  return m;
}

inline Mask gen_expand(int h, int w) { return gen_expand(h, w, std::max(1, std::min(h, w) / 4)); }

struct BrushStyle {
  int min_thickness = 1;
  int max_thickness = 3;
  double box_probability = 0.3;
  int max_vertices = 4;
};

/// Random rectangles and thick polyline strokes, drawn until at least
/// `coverage` of the pixels are unknown.
inline Mask gen_box_brush(Rng& rng, int h, int w, double coverage, const BrushStyle& style = {}) {
  if (!(coverage > 0.0) || coverage >= 1.0) throw std::invalid_argument("brush coverage must be in (0, 1)");
  Mask m(h, w, 1);
  const auto target = static_cast<std::size_t>(std::ceil(coverage * static_cast<double>(h) * w));
  auto erase_disk = [&](double cy, double cx, double r) {
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r))), y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + r)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r))), x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + r)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m.at(y, x) = 0;
  };
  for (int guard = 0; m.unknown_count() < target && guard < 10000; ++guard) {
    if (rng.bernoulli(style.box_probability)) {
      const int bh = rng.uniform_int(1, std::max(1, h / 2)), bw = rng.uniform_int(1, std::max(1, w / 2));
      const int oy = rng.uniform_int(0, h - bh), ox = rng.uniform_int(0, w - bw);
      for (int y = oy; y < oy + bh; ++y)
        for (int x = ox; x < ox + bw; ++x) m.at(y, x) = 0;
    } else {
      const double r = 0.5 * rng.uniform_int(style.min_thickness, style.max_thickness);
      double cy = rng.uniform(0.0, h - 1.0), cx = rng.uniform(0.0, w - 1.0);
      const int vertices = rng.uniform_int(1, style.max_vertices);
      for (int v = 0; v < vertices; ++v) {
        const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double len = rng.uniform(1.0, std::max(2.0, 0.5 * std::max(h, w)));
        const double ny = std::clamp(cy + len * std::sin(angle), 0.0, h - 1.0);
        const double nx = std::clamp(cx + len * std::cos(angle), 0.0, w - 1.0);
        const int samples = static_cast<int>(std::ceil(len * 2)) + 1;
        for (int s = 0; s <= samples; ++s) {
          const double f = static_cast<double>(s) / samples;
          erase_disk(cy + f * (ny - cy), cx + f * (nx - cx), r);
        }
        cy = ny;
        cx = nx;
      }
    }
  }
  return m;
}

// ------------------------------------------------------------ mask families

enum class MaskFamily { patch, brush, wide, narrow, sr2x, lines, half, expand };

inline constexpr std::string_view mask_family_names =
    "patch, brush, wide, narrow, sr2x, lines, half, expand";

inline std::string_view to_string(MaskFamily f) {
  switch (f) {
    case MaskFamily::patch: return "patch";
    case MaskFamily::brush: return "brush";
    case MaskFamily::wide: return "wide";
    case MaskFamily::narrow: return "narrow";
    case MaskFamily::sr2x: return "sr2x";
    case MaskFamily::lines: return "lines";
    case MaskFamily::half: return "half";
    case MaskFamily::expand: return "expand";
  }
  return "?";
}

inline MaskFamily parse_mask_family(std::string_view name) {
  for (MaskFamily f : {MaskFamily::patch, MaskFamily::brush, MaskFamily::wide, MaskFamily::narrow, MaskFamily::sr2x,
                       MaskFamily::lines, MaskFamily::half, MaskFamily::expand})
    if (to_string(f) == name) return f;
  throw std::invalid_argument("unknown mask family '" + std::string(name) + "' (valid: " +
                              std::string(mask_family_names) + ")");
}

inline bool is_deterministic(MaskFamily f) {
  return f == MaskFamily::sr2x || f == MaskFamily::lines || f == MaskFamily::half || f == MaskFamily::expand;
}

/// A mask from the named family. Deterministic families ignore `rng`.
inline Mask make_mask(MaskFamily family, Rng& rng, int h, int w) {
  switch (family) {
    case MaskFamily::patch: return sample_train_timemap(rng, h, w, 1, 1).mask;
    case MaskFamily::brush: return gen_box_brush(rng, h, w, rng.uniform(0.1, 0.5));
    case MaskFamily::wide:
      return gen_box_brush(rng, h, w, 0.4, BrushStyle{2, std::max(2, std::min(h, w) / 4), 0.5, 3});
    case MaskFamily::narrow: return gen_box_brush(rng, h, w, 0.2, BrushStyle{1, 1, 0.0, 5});
    case MaskFamily::sr2x: return gen_super_resolve_2x(h, w);
    case MaskFamily::lines: return gen_altern_lines(h, w);
    case MaskFamily::half: return gen_half(h, w);
    case MaskFamily::expand: return gen_expand(h, w);
  }
  throw std::logic_error("unhandled mask family");
}

}  // namespace tdpaint
