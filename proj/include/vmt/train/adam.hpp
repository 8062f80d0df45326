#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vmt/models/checkpoint.hpp"
#include "vmt/nn/params.hpp"

namespace vmt::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.997;
  double eps = 1e-9;
};

/// Adam with bias correction over every tensor in a ParamStore. A tensor
/// with no accumulated gradient is treated as having a zero gradient.
template <Real T>
class Adam {
 public:
  Adam(nn::ParamStore<T>& store, AdamConfig cfg = {}) : store_(&store), cfg_(cfg) {
    for (const auto& [name, t] : store.entries()) {
      state_.names.push_back(name);
      state_.m.emplace_back(t.size(), T(0));
      state_.v.emplace_back(t.size(), T(0));
    }
  }

  /// Checks every gradient is finite before touching anything, so an
  /// aborted step leaves parameters and moments as they were.
  void step(double lr) {
    auto& entries = store_->entries();
    for (const auto& [name, t] : entries) {
      if (!t.has_grad()) continue;
      for (T g : t.grad()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
      }
    }
    ++state_.step;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state_.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state_.step));
    for (std::size_t i = 0; i < entries.size(); ++i) {
      Tensor<T> p = entries[i].second;
      auto values = p.mutable_data();
      auto& m = state_.m[i];
      auto& v = state_.v[i];
      const bool has = p.has_grad();
      const std::span<const T> g = has ? std::span<const T>(p.mutable_grad()) : std::span<const T>();
      for (std::size_t k = 0; k < values.size(); ++k) {
        const T gk = has ? g[k] : T(0);
        m[k] = static_cast<T>(b1 * m[k] + (1.0 - b1) * gk);
        v[k] = static_cast<T>(b2 * v[k] + (1.0 - b2) * gk * gk);
        const double mhat = m[k] / c1, vhat = v[k] / c2;
        values[k] = static_cast<T>(values[k] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  std::uint64_t steps_taken() const { return state_.step; }
  const models::OptimizerState<T>& state() const { return state_; }

  /// Restores moments saved from an optimizer over the same parameters.
  void load_state(const models::OptimizerState<T>& s) {
    if (s.names != state_.names) throw CheckpointError("optimizer state does not match the model's parameter list");
    for (std::size_t i = 0; i < s.names.size(); ++i) {
      if (s.m[i].size() != state_.m[i].size() || s.v[i].size() != state_.v[i].size()) {
        throw CheckpointError("optimizer moments for '" + s.names[i] + "' have the wrong size");
      }
    }
    state_ = s;
  }

 private:
  nn::ParamStore<T>* store_;
  AdamConfig cfg_;
  models::OptimizerState<T> state_;
};

}  // namespace vmt::train
