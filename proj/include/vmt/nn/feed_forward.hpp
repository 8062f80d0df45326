#pragma once

#include <string>

#include "vmt/nn/params.hpp"

namespace vmt::nn {

/// Position-wise max(0, z W1 + b1) W2 + b2.
template <Real T>
struct FeedForward {
  Tensor<T> w1, b1, w2, b2;

  static FeedForward create(ParamStore<T>& store, const std::string& prefix, std::size_t width, std::size_t inner, Rng& rng) {
    return {store.add(prefix + ".w1", {width, inner}, Init::XavierUniform, rng),
            store.add(prefix + ".b1", {inner}, Init::Zeros, rng),
            store.add(prefix + ".w2", {inner, width}, Init::XavierUniform, rng),
            store.add(prefix + ".b2", {width}, Init::Zeros, rng)};
  }

  Tensor<T> operator()(const Tensor<T>& z) const {
    if (z.rank() < 1 || z.dim(z.rank() - 1) != w1.dim(0)) {
      throw ShapeError("ffn expects a last dimension of " + std::to_string(w1.dim(0)) + ", got " + to_string(z.shape()));
    }
    return matmul(relu(matmul(z, w1) + b1), w2) + b2;
  }
};

}  // namespace vmt::nn
