#pragma once

#include <string>

#include "vmt/nn/params.hpp"

namespace vmt::nn {

/// Gated recurrent unit:
///   r = σ(W_ir a + b_ir + W_hr h + b_hr)
///   z = σ(W_iz a + b_iz + W_hz h + b_hz)
///   n = tanh(W_in a + b_in + r * (W_hn h + b_hn))
///   h' = (1 - z) * n + z * h
/// Inputs are row vectors (or stacks of rows), so W a is computed as a Wᵀ.
template <Real T>
struct GruCell {
  Tensor<T> w_ir, w_iz, w_in;  // [H, H_in]
  Tensor<T> w_hr, w_hz, w_hn;  // [H, H]
  Tensor<T> b_ir, b_iz, b_in, b_hr, b_hz, b_hn;  // [H]

  static GruCell create(ParamStore<T>& store, const std::string& prefix, std::size_t input, std::size_t hidden, Rng& rng) {
    auto w = [&](const char* n, std::size_t cols) { return store.add(prefix + "." + n, {hidden, cols}, Init::XavierUniform, rng); };
    auto b = [&](const char* n) { return store.add(prefix + "." + n, {hidden}, Init::Zeros, rng); };
    GruCell c;
    c.w_ir = w("w_ir", input);
    c.w_iz = w("w_iz", input);
    c.w_in = w("w_in", input);
    c.w_hr = w("w_hr", hidden);
    c.w_hz = w("w_hz", hidden);
    c.w_hn = w("w_hn", hidden);
    c.b_ir = b("b_ir");
    c.b_iz = b("b_iz");
    c.b_in = b("b_in");
    c.b_hr = b("b_hr");
    c.b_hz = b("b_hz");
    c.b_hn = b("b_hn");
    return c;
  }

  std::size_t hidden() const { return w_hr.dim(0); }
  std::size_t input() const { return w_ir.dim(1); }

  /// a: [n, H_in], h: [n, H] -> [n, H].
  Tensor<T> operator()(const Tensor<T>& a, const Tensor<T>& h) const {
    if (a.rank() != 2 || a.dim(1) != input() || h.rank() != 2 || h.dim(1) != hidden() || a.dim(0) != h.dim(0)) {
      throw ShapeError("gru cell (input " + std::to_string(input()) + ", hidden " + std::to_string(hidden()) +
                       ") got input " + to_string(a.shape()) + " and state " + to_string(h.shape()));
    }
    auto r = sigmoid(matmul_nt(a, w_ir) + b_ir + matmul_nt(h, w_hr) + b_hr);
    auto z = sigmoid(matmul_nt(a, w_iz) + b_iz + matmul_nt(h, w_hz) + b_hz);
    auto n = tanh(matmul_nt(a, w_in) + b_in + r * (matmul_nt(h, w_hn) + b_hn));
    return (T(1) - z) * n + z * h;
  }
};

}  // namespace vmt::nn
