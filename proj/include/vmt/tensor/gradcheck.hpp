#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "vmt/tensor/random.hpp"
#include "vmt/tensor/tensor.hpp"

namespace vmt {

struct GradCheckOptions {
  double step = 1e-5;        // central-difference step h
  double tolerance = 1e-4;   // max relative error
  double floor = 1e-6;       // denominator floor so exact zeros compare sanely
  std::size_t max_entries = 0;  // per input; 0 checks every entry
  std::uint64_t seed = 0;       // picks the entries when sampling
  // Steps tried when `step` disagrees; the entry passes on the closest
  // agreement. A kink (LeakyReLU, ReLU) inside [x-h, x+h] spoils one step
  // size but not all of them, while a wrong gradient disagrees at every h.
  std::vector<double> retry_steps;
  // Also try Richardson-extrapolated one-sided differences at each step,
  // for kinks closer to x than any usable central step.
  bool one_sided = false;
};

struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst;  // "input#entry analytic=.. numeric=.."
  bool passed = true;
};

namespace detail {
inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}
}  // namespace detail

/// Compares reverse-mode gradients of `loss_fn(inputs)` with central finite
/// differences of the same function. Only forward evaluations are used for
/// the numeric side.
inline GradCheckResult gradcheck(const std::string& name, std::vector<Tensor<double>> inputs,
                                 const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& loss_fn,
                                 const GradCheckOptions& opt = {}) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  Tensor<double> loss = loss_fn(inputs);
  const double base = loss.item();
  backward(loss);

  GradCheckResult res;
  res.name = name;
  Rng rng(opt.seed);
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& in = inputs[k];
    const std::vector<double> analytic = in.grad();
    std::vector<std::size_t> entries(in.size());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (opt.max_entries != 0 && entries.size() > opt.max_entries) {
      rng.shuffle(entries.begin(), entries.end());
      entries.resize(opt.max_entries);
      std::sort(entries.begin(), entries.end());
    }
    auto values = in.mutable_data();
    for (std::size_t i : entries) {
      const double saved = values[i];
      auto central = [&](double h) {
        values[i] = saved + h;
        const double up = loss_fn(inputs).item();
        values[i] = saved - h;
        const double down = loss_fn(inputs).item();
        values[i] = saved;
        return (up - down) / (2.0 * h);
      };
      auto rel_error = [&](double numeric) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opt.floor});
        return std::abs(analytic[i] - numeric) / denom;
      };
      // 2 D(h/2) - D(h) with D(h) = (f(x + h) - f(x)) / h; h may be negative.
      auto one_sided = [&](double h) {
        values[i] = saved + h;
        const double far = loss_fn(inputs).item();
        values[i] = saved + h / 2;
        const double near = loss_fn(inputs).item();
        values[i] = saved;
        return 2.0 * (near - base) / (h / 2) - (far - base) / h;
      };
      double numeric = central(opt.step);
      double rel = rel_error(numeric);
      auto consider = [&](double n2) {
        if (rel_error(n2) < rel) {
          numeric = n2;
          rel = rel_error(n2);
        }
      };
      std::vector<double> steps{opt.step};
      for (double h : opt.retry_steps) {
        if (rel < opt.tolerance) break;
        consider(central(h));
        steps.push_back(h);
      }
      if (opt.one_sided) {
        for (double h : steps) {
          if (rel < opt.tolerance) break;
          consider(one_sided(h));
          if (rel < opt.tolerance) break;
          consider(one_sided(-h));
        }
      }
      ++res.checked;
      if (!(rel <= res.max_rel_error)) {
        res.max_rel_error = std::isnan(rel) ? INFINITY : rel;
        res.worst = "input " + std::to_string(k) + " entry " + std::to_string(i) + ": analytic=" +
                    detail::sci(analytic[i]) + " numeric=" + detail::sci(numeric);
      }
    }
  }
  res.passed = res.max_rel_error < opt.tolerance;
  return res;
}

}  // namespace vmt
