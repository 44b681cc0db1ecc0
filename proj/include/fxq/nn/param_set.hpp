#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "fxq/nn/tensor.hpp"

namespace fxq::nn {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  /// Weight matrices are quantizable; biases and normalization parameters are not.
  bool quantizable = false;

  friend bool operator==(const Parameter&, const Parameter&) = default;
};

/// Named tensors kept in declaration order. Also used for gradients and
/// running statistics.
template <typename T>
class ParamSet {
 public:
  void add(std::string name, Tensor<T> value, bool quantizable = false) {
    if (index_.contains(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value), quantizable});
  }

  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }

  Tensor<T>& at(std::string_view name) { return entries_[position(name)].value; }
  const Tensor<T>& at(std::string_view name) const { return entries_[position(name)].value; }
  const Parameter<T>& entry(std::string_view name) const { return entries_[position(name)]; }

  std::vector<Parameter<T>>& entries() noexcept { return entries_; }
  const std::vector<Parameter<T>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  /// Same names and shapes, all values zero.
  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& e : entries_) out.add(e.name, Tensor<T>(e.value.shape()), e.quantizable);
    return out;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.quantizable);
    return out;
  }

  bool all_finite() const {
    for (const auto& e : entries_) {
      if (!e.value.all_finite()) return false;
    }
    return true;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

 private:
  std::size_t position(std::string_view name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  std::vector<Parameter<T>> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace fxq::nn
