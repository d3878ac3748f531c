#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdpaint {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor. Images are stored channel-major (c x h x w).
template <class T>
struct BasicTensor {
  Shape shape;
  std::vector<T> data;

  BasicTensor() = default;
  explicit BasicTensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  BasicTensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_numel(shape))
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_string(shape));
  }

  std::size_t numel() const noexcept { return data.size(); }
  int rank() const noexcept { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  bool empty() const noexcept { return data.empty(); }

  T& operator[](std::size_t i) noexcept { return data[i]; }
  const T& operator[](std::size_t i) const noexcept { return data[i]; }
  T* ptr() noexcept { return data.data(); }
  const T* ptr() const noexcept { return data.data(); }

  // 3-d accessor for c x h x w images.
  T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x]; }
  const T& at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  bool all_finite() const noexcept {
    return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape == b.shape && a.data == b.data;
  }
};

using Tensor = BasicTensor<float>;

template <class T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what) {
  if (a.shape != b.shape)
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a.shape) + " vs " +
                                shape_string(b.shape));
}

template <class T>
BasicTensor<T> map(const BasicTensor<T>& a, const std::function<T(T)>& f) {
  BasicTensor<T> out(a.shape);
  std::transform(a.data.begin(), a.data.end(), out.data.begin(), f);
  return out;
}

template <class T>
BasicTensor<T> clamp(BasicTensor<T> a, T lo, T hi) {
  for (T& v : a.data) v = std::clamp(v, lo, hi);
  return a;
}

// Image helpers: c x h x w
inline int channels(const Tensor& img) { return img.dim(0); }
inline int height(const Tensor& img) { return img.dim(1); }
inline int width(const Tensor& img) { return img.dim(2); }

template <class T>
void require_image(const BasicTensor<T>& img, const char* what) {
  if (img.rank() != 3) throw std::invalid_argument(std::string(what) + ": expected c x h x w, got " +
                                                   shape_string(img.shape));
}

}  // namespace tdpaint
