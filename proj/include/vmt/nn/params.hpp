#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "vmt/tensor/ops.hpp"

namespace vmt::nn {

enum class Init { XavierUniform, Zeros, Ones };

/// Named, ordered collection of trainable leaf tensors. Layers keep
/// handles to the same tensors, so updating a value here is visible to
/// every layer that uses it.
template <Real T>
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  Tensor<T> add(const std::string& name, const Shape& shape, Init init, Rng& rng) {
    if (contains(name)) throw ShapeError("duplicate parameter name '" + name + "'");
    std::vector<T> values(numel(shape), T(0));
    switch (init) {
      case Init::Zeros:
        break;
      case Init::Ones:
        std::fill(values.begin(), values.end(), T(1));
        break;
      case Init::XavierUniform: {
        const auto [fan_in, fan_out] = fans(shape);
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (auto& v : values) v = static_cast<T>(rng.uniform(-limit, limit));
        break;
      }
    }
    Tensor<T> t(shape, std::move(values), true);
    entries_.emplace_back(name, t);
    return t;
  }

  bool contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.first == name; });
  }

  const Tensor<T>& at(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.first == name) return e.second;
    }
    throw ShapeError("no parameter named '" + name + "'");
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

 private:
  static std::pair<std::size_t, std::size_t> fans(const Shape& shape) {
    if (shape.size() == 1) return {shape[0], shape[0]};
    if (shape.size() == 2) return {shape[0], shape[1]};
    // conv kernel [out, in, kh, kw]
    const std::size_t field = numel(Shape(shape.begin() + 2, shape.end()));
    return {shape[1] * field, shape[0] * field};
  }

  std::vector<Entry> entries_;
};

/// Train/eval switch plus the randomness dropout draws from.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;

  static ForwardContext eval() { return {}; }
  static ForwardContext train(double p, Rng& r) { return {true, p, &r}; }

  template <Real T>
  Tensor<T> drop(const Tensor<T>& x) const {
    if (!training || dropout <= 0.0 || rng == nullptr) return x;
    return vmt::dropout(x, dropout, *rng);
  }
};

/// Scale/shift pair of a layer norm.
template <Real T>
struct NormParams {
  Tensor<T> scale;
  Tensor<T> shift;

  static NormParams create(ParamStore<T>& store, const std::string& prefix, std::size_t width, Rng& rng) {
    return {store.add(prefix + ".scale", {width}, Init::Ones, rng), store.add(prefix + ".shift", {width}, Init::Zeros, rng)};
  }

  Tensor<T> operator()(const Tensor<T>& x, long axis = -1) const { return layer_norm(x, scale, shift, axis); }
};

}  // namespace vmt::nn
