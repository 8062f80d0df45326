#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "vmt/codec/performance.hpp"
#include "vmt/nn/params.hpp"

namespace vmt::nn {

/// PE(pos, 2i) = sin(pos / 10000^(2i/H)), PE(pos, 2i+1) = cos(same).
template <Real T>
Tensor<T> positional_encoding(std::size_t length, std::size_t width, std::size_t first_position = 0) {
  if (width == 0 || width % 2 != 0) throw ShapeError("positional encoding needs an even width, got " + std::to_string(width));
  if (length == 0) throw ShapeError("positional encoding of zero length");
  std::vector<T> values(length * width);
  for (std::size_t p = 0; p < length; ++p) {
    const double pos = static_cast<double>(first_position + p);
    for (std::size_t i = 0; i < width / 2; ++i) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(width));
      values[p * width + 2 * i] = static_cast<T>(std::sin(angle));
      values[p * width + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return Tensor<T>({length, width}, std::move(values));
}

/// Event embedding E_p of shape [H, |V|]; a token's vector is its column.
/// No scaling is applied to looked-up vectors.
template <Real T>
struct Embedding {
  Tensor<T> table;

  static Embedding create(ParamStore<T>& store, const std::string& prefix, std::size_t width, std::size_t vocab, Rng& rng) {
    return {store.add(prefix + ".table", {width, vocab}, Init::XavierUniform, rng)};
  }

  std::size_t width() const { return table.dim(0); }
  std::size_t vocab() const { return table.dim(1); }

  /// [len] ids -> [len, H].
  Tensor<T> operator()(std::span<const codec::TokenId> ids) const {
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    for (std::size_t id : idx) {
      if (id >= vocab()) throw ShapeError("token id " + std::to_string(id) + " outside the " + std::to_string(vocab()) + "-entry vocabulary");
    }
    return gather_columns(table, idx);
  }
};

}  // namespace vmt::nn
