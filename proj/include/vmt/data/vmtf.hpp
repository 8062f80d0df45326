#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vmt/error.hpp"
#include "vmt/midi/smf.hpp"
#include "vmt/tensor/tensor.hpp"

namespace vmt::data {

inline constexpr std::size_t kFrames = 40;
inline constexpr std::size_t kHeight = 128;
inline constexpr std::size_t kWidth = 128;
inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kClipBytes = kFrames * kHeight * kWidth * kChannels;  // 1,966,080
inline constexpr std::size_t kVmtfHeaderBytes = 12;
inline constexpr std::uint8_t kVmtfVersion = 1;

/// 40 RGB frames of 128x128, frame-major, row-major, channel-last.
struct FrameClip {
  std::vector<std::uint8_t> pixels = std::vector<std::uint8_t>(kClipBytes, 0);

  static std::size_t index(std::size_t frame, std::size_t y, std::size_t x, std::size_t c) {
    return ((frame * kHeight + y) * kWidth + x) * kChannels + c;
  }
  std::uint8_t& at(std::size_t frame, std::size_t y, std::size_t x, std::size_t c) { return pixels[index(frame, y, x, c)]; }
  std::uint8_t at(std::size_t frame, std::size_t y, std::size_t x, std::size_t c) const { return pixels[index(frame, y, x, c)]; }

  bool operator==(const FrameClip&) const = default;
};

inline std::vector<std::uint8_t> write_vmtf(const FrameClip& clip) {
  if (clip.pixels.size() != kClipBytes) {
    throw DataError("frame clip holds " + std::to_string(clip.pixels.size()) + " bytes, expected " + std::to_string(kClipBytes));
  }
  std::vector<std::uint8_t> out{'V', 'M', 'T', 'F', kVmtfVersion};
  auto u16 = [&out](std::size_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  };
  u16(kFrames);
  u16(kHeight);
  u16(kWidth);
  out.push_back(static_cast<std::uint8_t>(kChannels));
  out.insert(out.end(), clip.pixels.begin(), clip.pixels.end());
  return out;
}

inline FrameClip read_vmtf(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kVmtfHeaderBytes) {
    throw DataError("VMTF header needs " + std::to_string(kVmtfHeaderBytes) + " bytes, got " + std::to_string(bytes.size()));
  }
  if (!std::equal(bytes.begin(), bytes.begin() + 4, "VMTF")) throw DataError("bad VMTF magic");
  if (bytes[4] != kVmtfVersion) throw DataError("unsupported VMTF version " + std::to_string(bytes[4]));
  auto u16 = [&bytes](std::size_t at) { return static_cast<std::size_t>(bytes[at] | bytes[at + 1] << 8); };
  const std::size_t frames = u16(5), height = u16(7), width = u16(9), channels = bytes[11];
  if (frames != kFrames || height != kHeight || width != kWidth || channels != kChannels) {
    throw DataError("VMTF declares " + std::to_string(frames) + "x" + std::to_string(height) + "x" + std::to_string(width) + "x" +
                    std::to_string(channels) + ", expected 40x128x128x3");
  }
  const std::size_t expected = frames * height * width * channels;
  const std::size_t actual = bytes.size() - kVmtfHeaderBytes;
  if (actual != expected) {
    throw DataError("VMTF payload is " + std::to_string(actual) + " bytes, expected " + std::to_string(expected));
  }
  FrameClip clip;
  std::copy(bytes.begin() + kVmtfHeaderBytes, bytes.end(), clip.pixels.begin());
  return clip;
}

inline FrameClip read_vmtf_file(const std::filesystem::path& path) {
  const auto bytes = midi::read_file_bytes(path);
  try {
    return read_vmtf(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_vmtf_file(const std::filesystem::path& path, const FrameClip& clip) {
  midi::write_file_bytes(path, write_vmtf(clip));
}

/// u8 -> [-1, 1] via v / 127.5 - 1, laid out [frames, channels, height, width].
template <Real T>
Tensor<T> normalize(const FrameClip& clip) {
  std::array<T, 256> table;
  for (std::size_t v = 0; v < 256; ++v) table[v] = static_cast<T>(static_cast<double>(v) / 127.5 - 1.0);
  std::vector<T> out(kClipBytes);
  for (std::size_t f = 0; f < kFrames; ++f) {
    for (std::size_t y = 0; y < kHeight; ++y) {
      for (std::size_t x = 0; x < kWidth; ++x) {
        for (std::size_t c = 0; c < kChannels; ++c) {
          out[((f * kChannels + c) * kHeight + y) * kWidth + x] = table[clip.at(f, y, x, c)];
        }
      }
    }
  }
  return Tensor<T>({kFrames, kChannels, kHeight, kWidth}, std::move(out));
}

}  // namespace vmt::data
