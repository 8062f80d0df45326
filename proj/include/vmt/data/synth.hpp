#pragma once

// Paired clips with a learnable picture-to-music mapping:
//   block band (top..bottom of 5)  -> arpeggio root 84, 72, 60, 48, 36
//   sweep period 1 s or 2 s        -> one note per period, each 0.5 s long
//   block colour red or green      -> velocity 80 or 110
// The block sweeps left to right, entering and leaving the frame once per
// period, over a vertical-gradient background that varies per clip.

#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>

#include "vmt/data/dataset.hpp"

namespace vmt::data {

inline constexpr std::array<int, 5> kSynthRoots{84, 72, 60, 48, 36};
inline constexpr std::array<int, 4> kSynthArpeggio{0, 4, 7, 12};
inline constexpr std::size_t kSynthBlock = 20;
inline constexpr double kSynthNoteSec = 0.5;
inline constexpr double kClipSec = 10.0;

struct SynthParams {
  std::size_t band = 0;       // 0 = top
  double period_sec = 1.0;    // 1 or 2
  bool green = false;
  double phase = 0.0;         // fraction of a period
  int background = 40;        // gradient offset
};

inline SynthParams draw_synth_params(Rng& rng) {
  SynthParams p;
  p.band = rng.below(kSynthRoots.size());
  p.period_sec = rng.bernoulli(0.5) ? 1.0 : 2.0;
  p.green = rng.bernoulli(0.5);
  p.phase = rng.uniform();
  p.background = 20 + static_cast<int>(rng.below(40));
  return p;
}

inline midi::MidiScore synth_score(const SynthParams& p) {
  midi::MidiScore s;
  const int count = static_cast<int>(std::lround(kClipSec / p.period_sec));
  for (int k = 0; k < count; ++k) {
    const double onset = k * p.period_sec;
    s.notes.push_back({onset, onset + kSynthNoteSec, kSynthRoots[p.band] + kSynthArpeggio[static_cast<std::size_t>(k) % 4],
                       p.green ? 110 : 80});
  }
  midi::sort_notes(s.notes);
  return s;
}

inline FrameClip synth_clip(const SynthParams& p) {
  FrameClip clip;
  const double band_h = static_cast<double>(kHeight) / kSynthRoots.size();
  const auto top = static_cast<std::size_t>(std::lround(p.band * band_h + (band_h - kSynthBlock) / 2));
  const std::array<std::uint8_t, 3> colour = p.green ? std::array<std::uint8_t, 3>{40, 230, 60} : std::array<std::uint8_t, 3>{230, 40, 40};
  const double travel = static_cast<double>(kWidth + kSynthBlock);
  for (std::size_t f = 0; f < kFrames; ++f) {
    const double t = static_cast<double>(f) * kClipSec / kFrames;
    const double cycle = t / p.period_sec + p.phase;
    const long left = static_cast<long>(std::floor((cycle - std::floor(cycle)) * travel)) - static_cast<long>(kSynthBlock);
    for (std::size_t y = 0; y < kHeight; ++y) {
      const auto shade = static_cast<std::uint8_t>(p.background + (y * 100) / kHeight);
      for (std::size_t x = 0; x < kWidth; ++x) {
        const bool inside = y >= top && y < top + kSynthBlock && static_cast<long>(x) >= left &&
                            static_cast<long>(x) < left + static_cast<long>(kSynthBlock);
        for (std::size_t c = 0; c < kChannels; ++c) clip.at(f, y, x, c) = inside ? colour[c] : shade;
      }
    }
  }
  return clip;
}

/// Proportional 90:10:28 assignment by position, as in the song counts of
/// the original split.
inline std::string proportional_split(std::size_t index, std::size_t count) {
  const double r = (static_cast<double>(index) + 0.5) / static_cast<double>(count);
  if (r < 90.0 / 128.0) return "train";
  if (r < 100.0 / 128.0) return "validation";
  return "test";
}

struct SynthOptions {
  std::optional<std::string> split;  // put every pair in one split
};

struct SynthPair {
  SynthParams params;
  FrameClip clip;
  midi::MidiScore score;
};

inline SynthPair synth_pair(std::uint64_t seed, std::size_t index) {
  Rng rng = Rng::derive(seed, index);
  SynthPair out;
  out.params = draw_synth_params(rng);
  out.clip = synth_clip(out.params);
  out.score = synth_score(out.params);
  return out;
}

/// Writes clips/, midi/ and manifest.json under `dir`; returns the manifest.
inline Manifest synth_dataset(std::size_t n_pairs, std::uint64_t seed, const std::filesystem::path& dir,
                              const SynthOptions& opt = {}) {
  if (n_pairs == 0) throw DataError("synth_dataset needs at least one pair");
  if (opt.split) {
    const auto& names = split_names();
    if (std::find(names.begin(), names.end(), *opt.split) == names.end()) throw DataError("unknown split '" + *opt.split + "'");
  }
  std::filesystem::create_directories(dir / "clips");
  std::filesystem::create_directories(dir / "midi");
  Manifest m;
  m.root = dir;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const SynthPair pair = synth_pair(seed, i);
    const std::string id = "synth-" + std::to_string(seed) + "-" + std::to_string(i);
    ManifestEntry e{"clips/" + id + ".vmtf", "midi/" + id + ".mid", opt.split.value_or(proportional_split(i, n_pairs)), id};
    write_vmtf_file(dir / e.clip, pair.clip);
    midi::write_smf_file(dir / e.midi, pair.score);
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, dir / "manifest.json");
  return m;
}

/// The same pairs in memory, skipping the filesystem.
inline std::vector<ClipPair> synth_pairs(std::size_t n_pairs, std::uint64_t seed, std::size_t first = 0) {
  std::vector<ClipPair> out;
  for (std::size_t i = first; i < first + n_pairs; ++i) {
    SynthPair p = synth_pair(seed, i);
    out.push_back({std::move(p.clip), codec::encode(p.score), "synth-" + std::to_string(seed) + "-" + std::to_string(i)});
  }
  return out;
}

}  // namespace vmt::data
