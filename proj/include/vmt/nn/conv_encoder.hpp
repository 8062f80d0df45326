#pragma once

#include <string>
#include <vector>

#include "vmt/nn/params.hpp"

namespace vmt::nn {

inline constexpr std::size_t kConvKernel = 4;
inline constexpr std::size_t kConvStride = 2;
inline constexpr std::size_t kConvPad = 1;

/// Filter counts F_i = base * 2^(i(i+1)/2) for i = 0, 1, 2; base 64 gives
/// (64, 128, 512).
inline std::vector<std::size_t> conv_channel_plan(std::size_t base = 64) {
  std::vector<std::size_t> plan;
  for (std::size_t i = 0; i < 3; ++i) plan.push_back(base << (i * (i + 1) / 2));
  return plan;
}

/// Per-frame encoder: three rounds of strided conv -> LeakyReLU -> layer
/// norm over channels, then a global average pool. Frames share weights
/// and are processed independently. No conv bias; the norm shift covers it.
template <Real T>
class ConvFrameEncoder {
 public:
  struct Layer {
    Tensor<T> kernel;  // [C_out, C_in, 4, 4]
    NormParams<T> norm;
  };

  ConvFrameEncoder(ParamStore<T>& store, const std::string& prefix, const std::vector<std::size_t>& channels, Rng& rng) {
    if (channels.empty()) throw ShapeError("conv encoder needs at least one layer");
    std::size_t in = 3;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const std::string p = prefix + ".conv" + std::to_string(i);
      layers_.push_back({store.add(p + ".kernel", {channels[i], in, kConvKernel, kConvKernel}, Init::XavierUniform, rng),
                         NormParams<T>::create(store, p + ".norm", channels[i], rng)});
      in = channels[i];
    }
  }

  std::size_t output_dim() const { return layers_.back().kernel.dim(0); }
  const std::vector<Layer>& layers() const { return layers_; }

  /// [frames, 3, H, W] -> [frames, C_last].
  Tensor<T> operator()(const Tensor<T>& frames) const {
    if (frames.rank() != 4 || frames.dim(1) != 3) {
      throw ShapeError("conv frame encoder expects [frames, 3, H, W], got " + to_string(frames.shape()));
    }
    Tensor<T> x = frames;
    for (const auto& layer : layers_) {
      x = conv2d(x, layer.kernel, kConvStride, kConvPad);
      x = leaky_relu(x, T(0.01));
      x = layer.norm(x, 1);
    }
    return global_avg_pool(x);
  }

 private:
  std::vector<Layer> layers_;
};

}  // namespace vmt::nn
