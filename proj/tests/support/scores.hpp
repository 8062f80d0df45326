#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "vmt/midi/smf.hpp"
#include "vmt/tensor/random.hpp"

namespace vmt::fixtures {

// Random valid score inside a 10 s clip: notes last at least two 31.25 ms
// bins and same-pitch notes keep a gap of at least two bins, so bin
// quantisation cannot merge or reorder them.
inline midi::MidiScore random_score(std::uint64_t seed, std::size_t max_notes = 40) {
  Rng rng(seed);
  midi::MidiScore s;
  const std::size_t count = rng.below(max_notes + 1);
  const double bin = 0.03125;
  std::vector<std::vector<std::pair<double, double>>> busy(128);
  for (std::size_t i = 0; i < count; ++i) {
    midi::Note n;
    n.pitch = 21 + static_cast<int>(rng.below(88));
    n.velocity = 1 + static_cast<int>(rng.below(127));
    n.onset_sec = rng.uniform(0.0, 9.5);
    n.offset_sec = std::min(10.0, n.onset_sec + rng.uniform(2 * bin, 2.0));
    bool clash = false;
    for (auto [on, off] : busy[n.pitch]) {
      if (n.onset_sec < off + 2 * bin && on < n.offset_sec + 2 * bin) clash = true;
    }
    if (clash) continue;
    busy[n.pitch].push_back({n.onset_sec, n.offset_sec});
    s.notes.push_back(n);
  }
  midi::sort_notes(s.notes);
  return s;
}

// Quantisation can swap notes whose onsets nearly coincide, so round-trip
// comparisons pair notes by (pitch, onset).
inline std::vector<midi::Note> by_pitch(std::vector<midi::Note> notes) {
  std::sort(notes.begin(), notes.end(), [](const midi::Note& a, const midi::Note& b) {
    return std::make_pair(a.pitch, a.onset_sec) < std::make_pair(b.pitch, b.onset_sec);
  });
  return notes;
}

// Hand-rolled SMF assembly for parser tests.
struct SmfBuilder {
  std::vector<std::uint8_t> bytes;

  SmfBuilder& header(std::uint16_t format, std::uint16_t tracks, std::uint16_t division) {
    append("MThd");
    u32(6);
    u16(format);
    u16(tracks);
    u16(division);
    return *this;
  }
  SmfBuilder& track(const std::vector<std::uint8_t>& body) {
    append("MTrk");
    u32(static_cast<std::uint32_t>(body.size()));
    bytes.insert(bytes.end(), body.begin(), body.end());
    return *this;
  }
  void append(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
  void u32(std::uint32_t v) {
    for (int sh = 24; sh >= 0; sh -= 8) bytes.push_back(static_cast<std::uint8_t>(v >> sh));
  }
  void u16(std::uint16_t v) {
    bytes.push_back(static_cast<std::uint8_t>(v >> 8));
    bytes.push_back(static_cast<std::uint8_t>(v));
  }
};

inline std::vector<std::uint8_t> vlq(std::uint32_t v) {
  std::vector<std::uint8_t> out{static_cast<std::uint8_t>(v & 0x7f)};
  while (v >>= 7) out.insert(out.begin(), static_cast<std::uint8_t>(0x80 | (v & 0x7f)));
  return out;
}

inline std::vector<std::uint8_t> tempo_event(std::uint32_t delta, std::uint32_t us) {
  auto out = vlq(delta);
  for (std::uint8_t b : {0xFF, 0x51, 0x03}) out.push_back(b);
  out.push_back(static_cast<std::uint8_t>(us >> 16));
  out.push_back(static_cast<std::uint8_t>(us >> 8));
  out.push_back(static_cast<std::uint8_t>(us));
  return out;
}

inline std::vector<std::uint8_t> channel_event(std::uint32_t delta, std::uint8_t status, std::uint8_t a, std::uint8_t b) {
  auto out = vlq(delta);
  out.push_back(status);
  out.push_back(a);
  out.push_back(b);
  return out;
}

inline std::vector<std::uint8_t> end_of_track(std::uint32_t delta = 0) {
  auto out = vlq(delta);
  for (std::uint8_t b : {0xFF, 0x2F, 0x00}) out.push_back(b);
  return out;
}

template <typename... Parts>
std::vector<std::uint8_t> join(const Parts&... parts) {
  std::vector<std::uint8_t> out;
  (out.insert(out.end(), parts.begin(), parts.end()), ...);
  return out;
}

}  // namespace vmt::fixtures
