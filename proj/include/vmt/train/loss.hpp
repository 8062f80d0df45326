#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vmt/codec/performance.hpp"
#include "vmt/tensor/ops.hpp"

namespace vmt::train {

/// Mean of -log softmax(logits)[t, y_t] over positions whose mask is set.
/// An empty mask means every position counts.
template <Real T>
Tensor<T> nll_loss(const Tensor<T>& logits, std::span<const codec::TokenId> targets, std::span<const std::uint8_t> mask = {}) {
  if (logits.rank() != 2) throw ShapeError("nll_loss expects [len, vocab] logits, got " + to_string(logits.shape()));
  if (targets.size() != logits.dim(0)) {
    throw ShapeError("nll_loss: " + std::to_string(targets.size()) + " targets for " + std::to_string(logits.dim(0)) + " logit rows");
  }
  if (!mask.empty() && mask.size() != targets.size()) {
    throw ShapeError("nll_loss: mask of " + std::to_string(mask.size()) + " for " + std::to_string(targets.size()) + " targets");
  }
  std::vector<std::size_t> rows, cols;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    rows.push_back(i);
    cols.push_back(targets[i]);
  }
  if (rows.empty()) throw ShapeError("nll_loss: every position is masked");
  const Tensor<T> logp = log_softmax(logits);
  Tensor<T> picked;
  if (rows.size() == targets.size()) {
    picked = pick_per_row(logp, cols);
  } else {
    // Masked rows: gather the live ones first.
    std::vector<Tensor<T>> live;
    for (std::size_t r : rows) live.push_back(slice(logp, 0, r, r + 1));
    picked = pick_per_row(concat(live, 0), cols);
  }
  return scale(sum(picked), T(-1) / static_cast<T>(rows.size()));
}

}  // namespace vmt::train
