#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "autodiff.hpp"

namespace tdpaint {

/// Named trainable tensors. Iteration order is the lexicographic name order,
/// which fixes the order of checkpoint files and optimizer updates.
template <class T>
class BasicParameters {
 public:
  void add(const std::string& name, BasicTensor<T> value) {
    if (!entries_.emplace(name, ad::Var<T>::leaf(std::move(value), true)).second)
      throw std::invalid_argument("duplicate parameter " + name);
  }

  const ad::Var<T>& operator[](const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
  }
  ad::Var<T>& operator[](const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_) n += v.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, v] : entries_) v.zero_grad();
  }

  /// Deep copy with fresh leaves (no shared gradient state).
  template <class U = T>
  BasicParameters<U> clone_as() const {
    BasicParameters<U> out;
    for (const auto& [name, v] : entries_) out.add(name, v.value().template cast<U>());
    return out;
  }

 private:
  std::map<std::string, ad::Var<T>> entries_;
};

using Parameters = BasicParameters<float>;

}  // namespace tdpaint
