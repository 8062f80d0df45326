#pragma once

// Finite-difference checks for every differentiable tensor op, on small
// random float64 operands (at most 6 entries per axis).

#include <functional>
#include <string>
#include <vector>

#include "vmt/tensor/gradcheck.hpp"
#include "vmt/tensor/ops.hpp"

namespace vmt {

namespace detail {

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(shape, std::move(v));
}

// Values bounded away from zero, for ops with a kink or pole at 0.
inline Tensor<double> random_nonzero(const Shape& shape, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
  return Tensor<double>(shape, std::move(v));
}

// sum(out ⊙ R) for a fixed random R, so every output entry gets a distinct weight.
inline std::function<Tensor<double>(const std::vector<Tensor<double>>&)> weighted(
    std::function<Tensor<double>(const std::vector<Tensor<double>>&)> op, std::uint64_t seed) {
  return [op = std::move(op), seed](const std::vector<Tensor<double>>& in) {
    Tensor<double> out = op(in);
    Rng r(seed ^ 0xabcdefULL);
    Tensor<double> w = random_tensor(out.shape(), r);
    return sum(mul(out, w));
  };
}

}  // namespace detail

inline std::vector<GradCheckResult> op_gradient_checks(std::uint64_t seed, const GradCheckOptions& opt = {}) {
  using detail::random_nonzero;
  using detail::random_tensor;
  using detail::weighted;
  using In = std::vector<Tensor<double>>;
  Rng rng(seed);
  auto dim = [&rng]() { return static_cast<std::size_t>(2 + rng.below(5)); };  // 2..6
  std::vector<GradCheckResult> results;
  auto check = [&](const std::string& name, In inputs, std::function<Tensor<double>(const In&)> op) {
    results.push_back(gradcheck(name, std::move(inputs), weighted(std::move(op), seed), opt));
  };

  const std::size_t m = dim(), k = dim(), n = dim();
  check("add", {random_tensor({m, n}, rng), random_tensor({m, n}, rng)}, [](const In& x) { return add(x[0], x[1]); });
  check("add_broadcast", {random_tensor({k, m, n}, rng), random_tensor({n}, rng)}, [](const In& x) { return add(x[0], x[1]); });
  check("sub_broadcast", {random_tensor({m, 1}, rng), random_tensor({k, 1, n}, rng)}, [](const In& x) { return sub(x[0], x[1]); });
  check("mul", {random_tensor({m, n}, rng), random_tensor({m, n}, rng)}, [](const In& x) { return mul(x[0], x[1]); });
  check("mul_broadcast", {random_tensor({m, n}, rng), random_tensor({m, 1}, rng)}, [](const In& x) { return mul(x[0], x[1]); });
  check("mul_self", {random_tensor({m, n}, rng)}, [](const In& x) { return mul(x[0], x[0]); });
  check("scale", {random_tensor({m, n}, rng)}, [](const In& x) { return scale(x[0], -1.7); });
  check("add_scalar", {random_tensor({m, n}, rng)}, [](const In& x) { return add_scalar(x[0], 0.3); });
  check("tanh", {random_tensor({m, n}, rng, -2, 2)}, [](const In& x) { return tanh(x[0]); });
  check("sigmoid", {random_tensor({m, n}, rng, -3, 3)}, [](const In& x) { return sigmoid(x[0]); });
  check("leaky_relu", {random_nonzero({m, n}, rng)}, [](const In& x) { return leaky_relu(x[0], 0.01); });
  check("relu", {random_nonzero({m, n}, rng)}, [](const In& x) { return relu(x[0]); });
  check("exp", {random_tensor({m, n}, rng)}, [](const In& x) { return exp(x[0]); });
  check("log", {random_tensor({m, n}, rng, 0.2, 2.0)}, [](const In& x) { return log(x[0]); });
  check("reshape", {random_tensor({m, n}, rng)}, [m, n](const In& x) { return reshape(x[0], {n, m}); });
  check("transpose", {random_tensor({k, m, n}, rng)}, [](const In& x) { return transpose(x[0], 0, 2); });
  check("concat", {random_tensor({m, n}, rng), random_tensor({k, n}, rng)}, [](const In& x) { return concat<double>({x[0], x[1]}, 0); });
  check("concat_inner", {random_tensor({m, n}, rng), random_tensor({m, k}, rng)}, [](const In& x) { return concat<double>({x[0], x[1]}, 1); });
  check("slice", {random_tensor({m, n, k}, rng)}, [n](const In& x) { return slice(x[0], 1, 1, n); });
  check("matmul", {random_tensor({m, k}, rng), random_tensor({k, n}, rng)}, [](const In& x) { return matmul(x[0], x[1]); });
  check("matmul_batched", {random_tensor({2, m, k}, rng), random_tensor({2, k, n}, rng)}, [](const In& x) { return matmul(x[0], x[1]); });
  check("matmul_shared_rhs", {random_tensor({2, m, k}, rng), random_tensor({k, n}, rng)}, [](const In& x) { return matmul(x[0], x[1]); });
  check("matmul_nt", {random_tensor({m, k}, rng), random_tensor({n, k}, rng)}, [](const In& x) { return matmul_nt(x[0], x[1]); });
  check("conv2d", {random_tensor({2, 2, 6, 6}, rng), random_tensor({3, 2, 4, 4}, rng)},
        [](const In& x) { return conv2d(x[0], x[1], 2, 1); });
  check("conv2d_unbatched", {random_tensor({2, 5, 5}, rng), random_tensor({2, 2, 3, 3}, rng)},
        [](const In& x) { return conv2d(x[0], x[1], 1, 0); });
  check("softmax_last", {random_tensor({m, n}, rng, -2, 2)}, [](const In& x) { return softmax(x[0]); });
  check("softmax_axis0", {random_tensor({m, n}, rng, -2, 2)}, [](const In& x) { return softmax(x[0], 0); });
  check("log_softmax", {random_tensor({m, n}, rng, -2, 2)}, [](const In& x) { return log_softmax(x[0]); });
  check("layer_norm_last", {random_tensor({m, n}, rng), random_tensor({n}, rng), random_tensor({n}, rng)},
        [](const In& x) { return layer_norm(x[0], x[1], x[2], -1); });
  check("layer_norm_channel", {random_tensor({2, k, 3, 3}, rng), random_tensor({k}, rng), random_tensor({k}, rng)},
        [](const In& x) { return layer_norm(x[0], x[1], x[2], 1); });
  check("global_avg_pool", {random_tensor({2, k, 3, 4}, rng)}, [](const In& x) { return global_avg_pool(x[0]); });
  check("sum", {random_tensor({m, n}, rng)}, [](const In& x) { return scale(sum(x[0]), 0.5); });
  check("mean", {random_tensor({m, n}, rng)}, [](const In& x) { return mean(x[0]); });
  check("gather_columns", {random_tensor({m, n}, rng)}, [n](const In& x) { return gather_columns(x[0], {0, n - 1, 0, 1}); });
  check("pick_per_row", {random_tensor({3, n}, rng)}, [n](const In& x) { return pick_per_row(x[0], {n - 1, 0, 1}); });
  check("masked_softmax", {random_tensor({n, n}, rng, -2, 2)}, [](const In& x) { return softmax(mask_future(x[0])); });
  return results;
}

}  // namespace vmt
