#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rcvqa/error.hpp"
#include "rcvqa/rng.hpp"
#include "rcvqa/tensor.hpp"

namespace rcvqa {

// Named trainable tensors in registration order. Registration order fixes
// checkpoint layout and optimizer state order.
template <class T>
class ParameterStore {
 public:
  // Returns a handle sharing storage with the registered tensor.
  Tensor<T> add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw ConfigError("parameter registered twice: " + name);
    value.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(value));
    return entries_.back().second;
  }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw IndexError("no parameter named " + name);
    return entries_[it->second].second;
  }
  const Tensor<T>& get(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->get(name);
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return entries_.size(); }

  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

// Glorot-style uniform init: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
template <class T>
Tensor<T> glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> v(shape_size(shape));
  for (T& x : v) x = static_cast<T>(rng.uniform(-limit, limit));
  return Tensor<T>(std::move(shape), std::move(v));
}

template <class T>
Tensor<T> uniform_init(Shape shape, double lo, double hi, Rng& rng) {
  std::vector<T> v(shape_size(shape));
  for (T& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(v));
}

template <class T>
Tensor<T> constant(Shape shape, T value) {
  return Tensor<T>(std::move(shape), value);
}

}  // namespace rcvqa
