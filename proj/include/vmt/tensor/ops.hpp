#pragma once

// Differentiable operations on Tensor<T>. Every op records a backward
// closure when recording is enabled; see tensor.hpp.
//
// Broadcasting follows trailing-dimension alignment: shapes are compared
// from the last axis backwards, and a dimension of size 1 (or a missing
// leading dimension) stretches to match the other operand.

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "vmt/tensor/random.hpp"
#include "vmt/tensor/tensor.hpp"

namespace vmt {

namespace detail {

template <Real T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <Real T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;
template <Real T>
using MatMap = Eigen::Map<RowMatrix<T>>;

inline Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da == db || db == 1) {
      out[i] = da;
    } else if (da == 1) {
      out[i] = db;
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    }
  }
  return out;
}

// Strides of `s` viewed in the rank of `out`; zero on broadcast axes.
inline std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> st(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    const std::size_t oi = i + r - s.size();
    st[oi] = (s[i] == 1 && out[oi] != 1) ? 0 : stride;
    stride *= s[i];
  }
  return st;
}

template <typename F>
void broadcast_for_each(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb, F f) {
  const std::size_t n = numel(out);
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// dfa(x, y, g) and dfb(x, y, g) give the gradient contribution to a and b.
template <Real T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA dfa, DB dfb) {
  auto an = a.node();
  auto bn = b.node();
  if (a.shape() == b.shape()) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(an->data[i], bn->data[i]);
    return Tensor<T>::from_op(a.shape(), std::move(out), {an, bn}, [an, bn, dfa, dfb](const Node<T>& self) {
      const auto& g = self.grad;
      if (an->requires_grad) {
        auto& ga = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += dfa(an->data[i], bn->data[i], g[i]);
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += dfb(an->data[i], bn->data[i], g[i]);
      }
    });
  }
  Shape shape = broadcast_shapes(a.shape(), b.shape(), name);
  auto sa = broadcast_strides(a.shape(), shape);
  auto sb = broadcast_strides(b.shape(), shape);
  std::vector<T> out(numel(shape));
  broadcast_for_each(shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out[o] = f(an->data[ia], bn->data[ib]);
  });
  return Tensor<T>::from_op(shape, std::move(out), {an, bn}, [an, bn, shape, sa, sb, dfa, dfb](const Node<T>& self) {
    const auto& g = self.grad;
    std::vector<T>* ga = an->requires_grad ? &an->grad_buffer() : nullptr;
    std::vector<T>* gb = bn->requires_grad ? &bn->grad_buffer() : nullptr;
    broadcast_for_each(shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (ga) (*ga)[ia] += dfa(an->data[ia], bn->data[ib], g[o]);
      if (gb) (*gb)[ib] += dfb(an->data[ia], bn->data[ib], g[o]);
    });
  });
}

// df(x, y) is dy/dx for the elementwise map y = f(x).
template <Real T, typename F, typename D>
Tensor<T> unary_op(const Tensor<T>& x, F f, D df) {
  auto xn = x.node();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xn->data[i]);
  return Tensor<T>::from_op(x.shape(), std::move(out), {xn}, [xn, df](const Node<T>& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * df(xn->data[i], self.data[i]);
  });
}

// (outer, length, inner) split of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " + to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline std::size_t normalize_axis(long axis, std::size_t rank) {
  const long r = static_cast<long>(rank);
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <Real T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T g) { return g; }, [](T, T, T g) { return g; });
}

template <Real T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T g) { return g; }, [](T, T, T g) { return -g; });
}

template <Real T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T g) { return g * y; }, [](T x, T, T g) { return g * x; });
}

template <Real T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary_op(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <Real T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary_op(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <Real T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <Real T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <Real T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <Real T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <Real T>
Tensor<T> operator*(const Tensor<T>& a, T s) { return scale(a, s); }
template <Real T>
Tensor<T> operator*(T s, const Tensor<T>& a) { return scale(a, s); }
template <Real T>
Tensor<T> operator+(const Tensor<T>& a, T s) { return add_scalar(a, s); }
template <Real T>
Tensor<T> operator-(T s, const Tensor<T>& a) { return add_scalar(neg(a), s); }
template <Real T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Nonlinearities

template <Real T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op(
      x,
      [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <Real T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

/// max(x, slope * x) for slope in [0, 1).
template <Real T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.01)) {
  return detail::unary_op(
      x, [slope](T v) { return v > T(0) ? v : slope * v; }, [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <Real T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <Real T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <Real T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <Real T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  auto xn = x.node();
  return Tensor<T>::from_op(std::move(shape), xn->data, {xn}, [xn](const detail::Node<T>& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

/// Swaps two axes (defaults to the last two).
template <Real T>
Tensor<T> transpose(const Tensor<T>& x, long axis0 = -2, long axis1 = -1) {
  const std::size_t r = x.rank();
  if (r < 2) throw ShapeError("transpose needs rank >= 2, got shape " + to_string(x.shape()));
  const std::size_t a0 = detail::normalize_axis(axis0, r);
  const std::size_t a1 = detail::normalize_axis(axis1, r);
  if (a0 >= r || a1 >= r) throw ShapeError("transpose: axis out of range for shape " + to_string(x.shape()));
  Shape out_shape = x.shape();
  std::swap(out_shape[a0], out_shape[a1]);
  // Input strides permuted into output order.
  std::vector<std::size_t> in_strides(r);
  std::size_t st = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_strides[i] = st;
    st *= x.dim(i);
  }
  std::swap(in_strides[a0], in_strides[a1]);
  std::vector<std::size_t> map(x.size());
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < map.size(); ++o) {
      map[o] = src;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        src += in_strides[d];
        if (idx[d] < out_shape[d]) break;
        src -= in_strides[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  auto xn = x.node();
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xn->data[map[o]];
  return Tensor<T>::from_op(out_shape, std::move(out), {xn}, [xn, map = std::move(map)](const detail::Node<T>& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t o = 0; o < map.size(); ++o) gx[map[o]] += self.grad[o];
  });
}

/// Joins tensors along `axis`; all other dimensions must agree.
template <Real T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, long axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  const std::size_t ax = detail::normalize_axis(axis, first.size());
  auto base = detail::split_axis(first, ax, "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<std::size_t> lengths;
  std::vector<typename Tensor<T>::NodePtr> nodes;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) {
      throw ShapeError("concat: rank mismatch between " + to_string(first) + " and " + to_string(p.shape()));
    }
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != ax && p.dim(i) != first[i]) {
        throw ShapeError("concat: shapes " + to_string(first) + " and " + to_string(p.shape()) + " differ off axis " +
                         std::to_string(ax));
      }
    }
    lengths.push_back(p.dim(ax));
    out_shape[ax] += p.dim(ax);
    nodes.push_back(p.node());
  }
  const std::size_t outer = base.outer, inner = base.inner, total = out_shape[ax];
  std::vector<T> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const auto& src = nodes[k]->data;
    const std::size_t len = lengths[k];
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * len * inner), len * inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total + offset) * inner));
    }
    offset += len;
  }
  return Tensor<T>::from_op(out_shape, std::move(out), nodes,
                            [nodes, lengths, outer, inner, total](const detail::Node<T>& self) {
                              std::size_t off = 0;
                              for (std::size_t k = 0; k < nodes.size(); ++k) {
                                const std::size_t len = lengths[k];
                                if (nodes[k]->requires_grad) {
                                  auto& g = nodes[k]->grad_buffer();
                                  for (std::size_t o = 0; o < outer; ++o) {
                                    for (std::size_t i = 0; i < len * inner; ++i) {
                                      g[o * len * inner + i] += self.grad[(o * total + off) * inner + i];
                                    }
                                  }
                                }
                                off += len;
                              }
                            });
}

/// Elements [begin, end) along `axis`.
template <Real T>
Tensor<T> slice(const Tensor<T>& x, long axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  auto s = detail::split_axis(x.shape(), ax, "slice");
  if (begin >= end || end > s.length) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for axis " +
                     std::to_string(ax) + " of shape " + to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  const std::size_t len = end - begin;
  out_shape[ax] = len;
  auto xn = x.node();
  std::vector<T> out(numel(out_shape));
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xn->data.begin() + static_cast<std::ptrdiff_t>((o * s.length + begin) * s.inner), len * s.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * len * s.inner));
  }
  return Tensor<T>::from_op(out_shape, std::move(out), {xn}, [xn, s, begin, len](const detail::Node<T>& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < len * s.inner; ++i) {
        gx[(o * s.length + begin) * s.inner + i] += self.grad[o * len * s.inner + i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix product over the last two axes. Leading (batch) axes must be equal,
/// or `b` may be a plain matrix shared by every batch entry of `a`.
template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t k = a.dim(a.rank() - 1);
  if (b.dim(b.rank() - 2) != k) {
    throw ShapeError("matmul: inner dimensions differ for " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t n = b.dim(b.rank() - 1);
  std::size_t m = a.dim(a.rank() - 2);
  std::size_t batch = 1;
  if (b.rank() == 2) {
    m = a.size() / k;  // fold a's batch axes into rows
  } else {
    if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      throw ShapeError("matmul: batch dimensions differ for " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    batch = a.size() / (m * k);
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  auto an = a.node();
  auto bn = b.node();
  const std::size_t b_step = b.rank() == 2 ? 0 : k * n;
  std::vector<T> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    detail::ConstMatMap<T> A(an->data.data() + i * m * k, m, k);
    detail::ConstMatMap<T> B(bn->data.data() + i * b_step, k, n);
    detail::MatMap<T> C(out.data() + i * m * n, m, n);
    C.noalias() = A * B;
  }
  return Tensor<T>::from_op(out_shape, std::move(out), {an, bn}, [an, bn, batch, m, k, n, b_step](const detail::Node<T>& self) {
    for (std::size_t i = 0; i < batch; ++i) {
      detail::ConstMatMap<T> G(self.grad.data() + i * m * n, m, n);
      if (an->requires_grad) {
        detail::ConstMatMap<T> B(bn->data.data() + i * b_step, k, n);
        detail::MatMap<T> GA(an->grad_buffer().data() + i * m * k, m, k);
        GA.noalias() += G * B.transpose();
      }
      if (bn->requires_grad) {
        detail::ConstMatMap<T> A(an->data.data() + i * m * k, m, k);
        detail::MatMap<T> GB(bn->grad_buffer().data() + i * b_step, k, n);
        GB.noalias() += A.transpose() * G;
      }
    }
  });
}

/// a · bᵀ for matrices a [m x k] and b [n x k] (a linear layer with the
/// weight stored output-major).
template <Real T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_nt: cannot multiply " + to_string(a.shape()) + " by the transpose of " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  auto an = a.node();
  auto bn = b.node();
  std::vector<T> out(m * n);
  detail::MatMap<T>(out.data(), m, n).noalias() =
      detail::ConstMatMap<T>(an->data.data(), m, k) * detail::ConstMatMap<T>(bn->data.data(), n, k).transpose();
  return Tensor<T>::from_op(Shape{m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](const detail::Node<T>& self) {
    detail::ConstMatMap<T> G(self.grad.data(), m, n);
    if (an->requires_grad) {
      detail::MatMap<T>(an->grad_buffer().data(), m, k).noalias() += G * detail::ConstMatMap<T>(bn->data.data(), n, k);
    }
    if (bn->requires_grad) {
      detail::MatMap<T>(bn->grad_buffer().data(), n, k).noalias() +=
          G.transpose() * detail::ConstMatMap<T>(an->data.data(), m, k);
    }
  });
}

/// 2-D cross-correlation (no kernel flip), zero padding on all sides.
///
/// x: [N, C_in, H, W] or [C_in, H, W]; kernel: [C_out, C_in, kh, kw].
/// Output spatial size is floor((H + 2*pad - kh) / stride) + 1.
template <Real T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride, std::size_t pad) {
  if (x.rank() != 3 && x.rank() != 4) throw ShapeError("conv2d input must be [N,C,H,W] or [C,H,W], got " + to_string(x.shape()));
  if (kernel.rank() != 4) throw ShapeError("conv2d kernel must be [C_out,C_in,kh,kw], got " + to_string(kernel.shape()));
  if (stride == 0) throw ShapeError("conv2d stride must be positive");
  const bool batched = x.rank() == 4;
  const std::size_t N = batched ? x.dim(0) : 1;
  const std::size_t C = x.dim(batched ? 1 : 0), H = x.dim(batched ? 2 : 1), W = x.dim(batched ? 3 : 2);
  const std::size_t Co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != C) {
    throw ShapeError("conv2d: kernel " + to_string(kernel.shape()) + " expects " + std::to_string(kernel.dim(1)) +
                     " input channels, input " + to_string(x.shape()) + " has " + std::to_string(C));
  }
  if (kh > H + 2 * pad || kw > W + 2 * pad) {
    throw ShapeError("conv2d: kernel " + to_string(kernel.shape()) + " larger than padded input " + to_string(x.shape()));
  }
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
  const std::size_t K = C * kh * kw, P = Ho * Wo;

  // Output columns [lo, hi) whose input column ox*stride + j - pad is in range.
  auto col_range = [=](std::size_t j) {
    const std::size_t lo = j >= pad ? 0 : (pad - j + stride - 1) / stride;
    const std::size_t hi = W + pad > j ? std::min(Wo, (W + pad - j - 1) / stride + 1) : 0;
    return std::make_pair(lo, std::max(lo, hi));
  };

  // Lowers one image to a [K x P] patch matrix.
  auto im2col = [=](const T* img, std::vector<T>& cols) {
    cols.resize(K * P);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          T* row = cols.data() + ((c * kh + i) * kw + j) * P;
          const auto [lo, hi] = col_range(j);
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            T* dst = row + oy * Wo;
            const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(H)) {
              std::fill(dst, dst + Wo, T(0));
              continue;
            }
            const T* src = img + (c * H + static_cast<std::size_t>(iy)) * W;
            std::fill(dst, dst + lo, T(0));
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride + j - pad];
            std::fill(dst + hi, dst + Wo, T(0));
          }
        }
      }
    }
  };

  auto xn = x.node();
  auto kn = kernel.node();
  std::vector<T> out(N * Co * P);
  std::vector<T> cols;
  detail::ConstMatMap<T> Wm(kn->data.data(), Co, K);
  for (std::size_t n = 0; n < N; ++n) {
    im2col(xn->data.data() + n * C * H * W, cols);
    detail::ConstMatMap<T> Cm(cols.data(), K, P);
    detail::MatMap<T> Om(out.data() + n * Co * P, Co, P);
    Om.noalias() = Wm * Cm;
  }
  Shape out_shape = batched ? Shape{N, Co, Ho, Wo} : Shape{Co, Ho, Wo};
  return Tensor<T>::from_op(out_shape, std::move(out), {xn, kn}, [=](const detail::Node<T>& self) {
    std::vector<T> cols_buf, dcols(K * P);
    detail::ConstMatMap<T> Wmat(kn->data.data(), Co, K);
    for (std::size_t n = 0; n < N; ++n) {
      detail::ConstMatMap<T> G(self.grad.data() + n * Co * P, Co, P);
      if (kn->requires_grad) {
        im2col(xn->data.data() + n * C * H * W, cols_buf);
        detail::ConstMatMap<T> Cm(cols_buf.data(), K, P);
        detail::MatMap<T> GW(kn->grad_buffer().data(), Co, K);
        GW.noalias() += G * Cm.transpose();
      }
      if (xn->requires_grad) {
        detail::MatMap<T> D(dcols.data(), K, P);
        D.noalias() = Wmat.transpose() * G;
        T* gimg = xn->grad_buffer().data() + n * C * H * W;
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t i = 0; i < kh; ++i) {
            for (std::size_t j = 0; j < kw; ++j) {
              const T* row = dcols.data() + ((c * kh + i) * kw + j) * P;
              const auto [lo, hi] = col_range(j);
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
                if (iy < 0 || iy >= static_cast<long>(H)) continue;
                T* dst = gimg + (c * H + static_cast<std::size_t>(iy)) * W;
                const T* src = row + oy * Wo;
                for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * stride + j - pad] += src[ox];
              }
            }
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and normalisation

template <Real T>
Tensor<T> sum(const Tensor<T>& x) {
  auto xn = x.node();
  T total = T(0);
  for (T v : xn->data) total += v;
  return Tensor<T>::from_op(Shape{}, {total}, {xn}, [xn](const detail::Node<T>& self) {
    auto& gx = xn->grad_buffer();
    for (auto& g : gx) g += self.grad[0];
  });
}

template <Real T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// Softmax along `axis` (default last).
template <Real T>
Tensor<T> softmax(const Tensor<T>& x, long axis = -1) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  auto s = detail::split_axis(x.shape(), ax, "softmax");
  auto xn = x.node();
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.length * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < s.length; ++k) mx = std::max(mx, xn->data[base + k * s.inner]);
      T denom = T(0);
      for (std::size_t k = 0; k < s.length; ++k) {
        const T e = std::exp(xn->data[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        denom += e;
      }
      for (std::size_t k = 0; k < s.length; ++k) out[base + k * s.inner] /= denom;
    }
  }
  return Tensor<T>::from_op(x.shape(), std::move(out), {xn}, [xn, s](const detail::Node<T>& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.length * s.inner + in;
        T dot = T(0);
        for (std::size_t k = 0; k < s.length; ++k) dot += self.grad[base + k * s.inner] * self.data[base + k * s.inner];
        for (std::size_t k = 0; k < s.length; ++k) {
          const std::size_t i = base + k * s.inner;
          gx[i] += self.data[i] * (self.grad[i] - dot);
        }
      }
    }
  });
}

/// log(softmax(x)) along the last axis, computed stably.
template <Real T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  auto s = detail::split_axis(x.shape(), x.rank() - 1, "log_softmax");
  auto xn = x.node();
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < s.outer; ++r) {
    const T* row = xn->data.data() + r * s.length;
    T mx = *std::max_element(row, row + s.length);
    T denom = T(0);
    for (std::size_t k = 0; k < s.length; ++k) denom += std::exp(row[k] - mx);
    const T lse = mx + std::log(denom);
    for (std::size_t k = 0; k < s.length; ++k) out[r * s.length + k] = row[k] - lse;
  }
  return Tensor<T>::from_op(x.shape(), std::move(out), {xn}, [xn, s](const detail::Node<T>& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t r = 0; r < s.outer; ++r) {
      T gsum = T(0);
      for (std::size_t k = 0; k < s.length; ++k) gsum += self.grad[r * s.length + k];
      for (std::size_t k = 0; k < s.length; ++k) {
        const std::size_t i = r * s.length + k;
        gx[i] += self.grad[i] - std::exp(self.data[i]) * gsum;
      }
    }
  });
}

/// Normalises to zero mean and unit variance along `axis`, then applies the
/// per-position scale and shift (both shaped [dim(axis)]).
template <Real T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, long axis = -1, T eps = T(1e-5)) {
  if (!(eps > T(0))) throw ShapeError("layer_norm: eps must be positive");
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  auto s = detail::split_axis(x.shape(), ax, "layer_norm");
  if (gain.shape() != Shape{s.length} || bias.shape() != Shape{s.length}) {
    throw ShapeError("layer_norm: scale " + to_string(gain.shape()) + " / shift " + to_string(bias.shape()) +
                     " do not match axis length " + std::to_string(s.length) + " of " + to_string(x.shape()));
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  std::vector<T> out(x.size()), xhat(x.size());
  std::vector<T> inv_std(s.outer * s.inner);
  const T len = static_cast<T>(s.length);
  // Statistics for one outer slice are accumulated across the contiguous
  // inner positions, so channel-axis norms stream through memory.
  std::vector<T> mu(s.inner), var(s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const T* xs = xn->data.data() + o * s.length * s.inner;
    std::fill(mu.begin(), mu.end(), T(0));
    std::fill(var.begin(), var.end(), T(0));
    for (std::size_t k = 0; k < s.length; ++k) {
      for (std::size_t in = 0; in < s.inner; ++in) mu[in] += xs[k * s.inner + in];
    }
    for (auto& m : mu) m /= len;
    for (std::size_t k = 0; k < s.length; ++k) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const T d = xs[k * s.inner + in] - mu[in];
        var[in] += d * d;
      }
    }
    T* is = inv_std.data() + o * s.inner;
    for (std::size_t in = 0; in < s.inner; ++in) is[in] = T(1) / std::sqrt(var[in] / len + eps);
    for (std::size_t k = 0; k < s.length; ++k) {
      const std::size_t row = (o * s.length + k) * s.inner;
      const T g = gn->data[k], b = bn->data[k];
      for (std::size_t in = 0; in < s.inner; ++in) {
        const T h = (xs[k * s.inner + in] - mu[in]) * is[in];
        xhat[row + in] = h;
        out[row + in] = h * g + b;
      }
    }
  }
  return Tensor<T>::from_op(
      x.shape(), std::move(out), {xn, gn, bn},
      [xn, gn, bn, s, len, xhat = std::move(xhat), inv_std = std::move(inv_std)](const detail::Node<T>& self) {
        std::vector<T>* gx = xn->requires_grad ? &xn->grad_buffer() : nullptr;
        std::vector<T>* gg = gn->requires_grad ? &gn->grad_buffer() : nullptr;
        std::vector<T>* gb = bn->requires_grad ? &bn->grad_buffer() : nullptr;
        std::vector<T> sum_d(s.inner), sum_dx(s.inner);
        for (std::size_t o = 0; o < s.outer; ++o) {
          std::fill(sum_d.begin(), sum_d.end(), T(0));
          std::fill(sum_dx.begin(), sum_dx.end(), T(0));
          for (std::size_t k = 0; k < s.length; ++k) {
            const std::size_t row = (o * s.length + k) * s.inner;
            const T* g = self.grad.data() + row;
            const T* h = xhat.data() + row;
            const T gain_k = gn->data[k];
            T acc_g = T(0), acc_b = T(0);
            for (std::size_t in = 0; in < s.inner; ++in) {
              acc_g += g[in] * h[in];
              acc_b += g[in];
              const T d = g[in] * gain_k;
              sum_d[in] += d;
              sum_dx[in] += d * h[in];
            }
            if (gg) (*gg)[k] += acc_g;
            if (gb) (*gb)[k] += acc_b;
          }
          if (!gx) continue;
          const T* is = inv_std.data() + o * s.inner;
          for (std::size_t k = 0; k < s.length; ++k) {
            const std::size_t row = (o * s.length + k) * s.inner;
            const T* g = self.grad.data() + row;
            const T* h = xhat.data() + row;
            T* dx = gx->data() + row;
            const T gain_k = gn->data[k];
            for (std::size_t in = 0; in < s.inner; ++in) {
              dx[in] += is[in] / len * (len * g[in] * gain_k - sum_d[in] - h[in] * sum_dx[in]);
            }
          }
        }
      });
}

/// Mean over the last two (spatial) axes: [..., H, W] -> [...].
template <Real T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() < 3) throw ShapeError("global_avg_pool needs [..., C, H, W], got " + to_string(x.shape()));
  const std::size_t area = x.dim(x.rank() - 2) * x.dim(x.rank() - 1);
  Shape out_shape(x.shape().begin(), x.shape().end() - 2);
  const std::size_t groups = numel(out_shape);
  auto xn = x.node();
  std::vector<T> out(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    T acc = T(0);
    for (std::size_t i = 0; i < area; ++i) acc += xn->data[g * area + i];
    out[g] = acc / static_cast<T>(area);
  }
  return Tensor<T>::from_op(out_shape, std::move(out), {xn}, [xn, area, groups](const detail::Node<T>& self) {
    auto& gx = xn->grad_buffer();
    const T w = T(1) / static_cast<T>(area);
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t i = 0; i < area; ++i) gx[g * area + i] += self.grad[g] * w;
    }
  });
}

// ---------------------------------------------------------------------------
// Indexing and masking

/// Rows of the result are columns of `table` ([dim x vocab]) picked by id.
template <Real T>
Tensor<T> gather_columns(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
  if (table.rank() != 2) throw ShapeError("gather_columns needs a matrix, got " + to_string(table.shape()));
  if (ids.empty()) throw ShapeError("gather_columns: empty id list");
  const std::size_t rows = table.dim(0), cols = table.dim(1);
  for (std::size_t id : ids) {
    if (id >= cols) throw ShapeError("gather_columns: id " + std::to_string(id) + " outside [0, " + std::to_string(cols) + ")");
  }
  auto tn = table.node();
  std::vector<T> out(ids.size() * rows);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    for (std::size_t h = 0; h < rows; ++h) out[t * rows + h] = tn->data[h * cols + ids[t]];
  }
  return Tensor<T>::from_op(Shape{ids.size(), rows}, std::move(out), {tn}, [tn, ids, rows, cols](const detail::Node<T>& self) {
    auto& g = tn->grad_buffer();
    for (std::size_t t = 0; t < ids.size(); ++t) {
      for (std::size_t h = 0; h < rows; ++h) g[h * cols + ids[t]] += self.grad[t * rows + h];
    }
  });
}

/// out[i] = x[i, index[i]] for a matrix x.
template <Real T>
Tensor<T> pick_per_row(const Tensor<T>& x, const std::vector<std::size_t>& index) {
  if (x.rank() != 2 || x.dim(0) != index.size()) {
    throw ShapeError("pick_per_row: matrix " + to_string(x.shape()) + " with " + std::to_string(index.size()) + " indices");
  }
  const std::size_t cols = x.dim(1);
  for (std::size_t c : index) {
    if (c >= cols) throw ShapeError("pick_per_row: column " + std::to_string(c) + " out of range");
  }
  auto xn = x.node();
  std::vector<T> out(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) out[r] = xn->data[r * cols + index[r]];
  return Tensor<T>::from_op(Shape{index.size()}, std::move(out), {xn}, [xn, index, cols](const detail::Node<T>& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t r = 0; r < index.size(); ++r) g[r * cols + index[r]] += self.grad[r];
  });
}

/// Sets entries above the shifted diagonal (column > row + offset) of the
/// last two axes to -infinity; they receive no gradient.
template <Real T>
Tensor<T> mask_future(const Tensor<T>& scores, std::size_t offset = 0) {
  if (scores.rank() < 2) throw ShapeError("mask_future needs rank >= 2, got " + to_string(scores.shape()));
  const std::size_t rows = scores.dim(scores.rank() - 2), cols = scores.dim(scores.rank() - 1);
  const std::size_t mats = scores.size() / (rows * cols);
  auto sn = scores.node();
  std::vector<T> out = sn->data;
  for (std::size_t m = 0; m < mats; ++m) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = r + offset + 1; c < cols; ++c) out[(m * rows + r) * cols + c] = -std::numeric_limits<T>::infinity();
    }
  }
  return Tensor<T>::from_op(scores.shape(), std::move(out), {sn}, [sn, rows, cols, mats, offset](const detail::Node<T>& self) {
    auto& g = sn->grad_buffer();
    for (std::size_t m = 0; m < mats; ++m) {
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t keep = std::min(cols, r + offset + 1);
        for (std::size_t c = 0; c < keep; ++c) g[(m * rows + r) * cols + c] += self.grad[(m * rows + r) * cols + c];
      }
    }
  });
}

/// Inverted dropout: zeroes each entry with probability p and rescales the
/// survivors by 1/(1-p). Identity when p == 0.
template <Real T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ShapeError("dropout probability must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.size());
  for (auto& m : mask) m = rng.bernoulli(p) ? T(0) : keep_scale;
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

}  // namespace vmt
