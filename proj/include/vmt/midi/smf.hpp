#pragma once

// Standard MIDI File reading/writing and the seconds-domain note list the
// rest of the pipeline works with.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "vmt/error.hpp"

namespace vmt::midi {

inline constexpr int kLowestPitch = 21;    // A0
inline constexpr int kHighestPitch = 108;  // C8
inline constexpr std::uint32_t kDefaultTempo = 500000;  // µs per quarter, 120 bpm
inline constexpr std::uint16_t kWriterTicksPerQuarter = 480;

struct Note {
  double onset_sec = 0.0;
  double offset_sec = 0.0;
  int pitch = 60;
  int velocity = 64;

  bool operator==(const Note&) const = default;
};

inline bool is_valid(const Note& n) {
  return n.onset_sec >= 0.0 && n.offset_sec > n.onset_sec && n.pitch >= kLowestPitch && n.pitch <= kHighestPitch &&
         n.velocity >= 1 && n.velocity <= 127;
}

struct TempoChange {
  std::uint64_t tick = 0;
  std::uint32_t us_per_quarter = kDefaultTempo;

  bool operator==(const TempoChange&) const = default;
};

/// Notes in absolute seconds plus the tick/tempo context they came from.
/// tempo_map is sorted by tick and starts at tick 0; notes are sorted by
/// onset (then pitch).
struct MidiScore {
  std::uint16_t ticks_per_quarter = kWriterTicksPerQuarter;
  std::vector<TempoChange> tempo_map{TempoChange{}};
  std::vector<Note> notes;

  double duration_sec() const {
    double end = 0.0;
    for (const auto& n : notes) end = std::max(end, n.offset_sec);
    return end;
  }
};

inline void sort_notes(std::vector<Note>& notes) {
  std::sort(notes.begin(), notes.end(), [](const Note& a, const Note& b) {
    return std::tie(a.onset_sec, a.pitch, a.offset_sec, a.velocity) < std::tie(b.onset_sec, b.pitch, b.offset_sec, b.velocity);
  });
}

/// Throws DataError describing the first invariant violation.
inline void validate(const MidiScore& score) {
  if (score.ticks_per_quarter == 0) throw DataError("ticks_per_quarter must be positive");
  if (score.tempo_map.empty() || score.tempo_map.front().tick != 0) throw DataError("tempo map must start at tick 0");
  for (std::size_t i = 0; i < score.tempo_map.size(); ++i) {
    if (score.tempo_map[i].us_per_quarter == 0) throw DataError("tempo entry with zero µs per quarter");
    if (i && score.tempo_map[i].tick <= score.tempo_map[i - 1].tick) throw DataError("tempo map not strictly sorted by tick");
  }
  for (std::size_t i = 0; i < score.notes.size(); ++i) {
    const Note& n = score.notes[i];
    if (!is_valid(n)) {
      throw DataError("invalid note #" + std::to_string(i) + " (onset " + std::to_string(n.onset_sec) + ", offset " +
                      std::to_string(n.offset_sec) + ", pitch " + std::to_string(n.pitch) + ", velocity " +
                      std::to_string(n.velocity) + ")");
    }
    if (i && n.onset_sec < score.notes[i - 1].onset_sec) throw DataError("notes not sorted by onset");
  }
}

/// Problems the parser tolerated.
struct SmfWarnings {
  std::size_t out_of_range_pitch = 0;  // outside [21, 108], dropped
  std::size_t unterminated = 0;        // note still sounding at end of track, closed there
  std::size_t zero_length = 0;         // on/off at the same tick, dropped
  std::size_t stray_note_off = 0;      // note-off with nothing to close

  std::size_t total() const { return out_of_range_pitch + unterminated + zero_length + stray_note_off; }
};

namespace detail {

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::size_t base) : bytes_(bytes), base_(base) {}

  std::size_t offset() const { return base_ + pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ >= bytes_.size(); }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw ParseError(std::string("truncated ") + what + ": need " + std::to_string(n) + " bytes, have " +
                       std::to_string(remaining()),
                       offset());
    }
  }

  std::uint8_t u8(const char* what = "data") {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint8_t peek() const {
    need(1, "event");
    return bytes_[pos_];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] << 8 | bytes_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = v << 8 | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }
  std::uint32_t vlq() {
    const std::size_t start = offset();
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      if (done()) throw ParseError("truncated variable-length quantity", start);
      const std::uint8_t b = bytes_[pos_++];
      v = v << 7 | (b & 0x7Fu);
      if (!(b & 0x80u)) return v;
    }
    throw ParseError("variable-length quantity longer than 4 bytes", start);
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

struct RawNoteEvent {
  std::uint64_t tick;
  bool on;  // note-on with velocity > 0
  std::uint8_t channel, pitch, velocity;
};

struct RawTrack {
  std::vector<RawNoteEvent> notes;
  std::uint64_t end_tick = 0;
};

inline RawTrack parse_track(ByteReader r, std::vector<TempoChange>& tempos) {
  RawTrack track;
  std::uint64_t tick = 0;
  std::uint8_t running = 0;
  auto data_byte = [&r]() {
    const std::size_t at = r.offset();
    const std::uint8_t b = r.u8("channel message");
    if (b & 0x80u) throw ParseError("status byte where a data byte was expected", at);
    return b;
  };
  while (!r.done()) {
    tick += r.vlq();
    std::uint8_t status = r.peek();
    if (status & 0x80u) {
      r.u8();
    } else {
      if (!running) throw ParseError("data byte without running status", r.offset());
      status = running;
    }
    if (status == 0xFF) {
      running = 0;
      const std::uint8_t type = r.u8("meta event");
      const std::uint32_t len = r.vlq();
      const std::size_t at = r.offset();
      auto payload = r.take(len, "meta event payload");
      if (type == 0x51) {
        if (len != 3) throw ParseError("tempo meta event must carry 3 bytes", at);
        const std::uint32_t us = static_cast<std::uint32_t>(payload[0]) << 16 | payload[1] << 8 | payload[2];
        if (us == 0) throw ParseError("tempo of zero µs per quarter", at);
        tempos.push_back({tick, us});
      } else if (type == 0x2F) {
        break;
      }
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      running = 0;
      r.take(r.vlq(), "sysex payload");
      continue;
    }
    if (status >= 0xF0) throw ParseError("unsupported system message in track", r.offset() - 1);
    running = status;
    const std::uint8_t kind = status & 0xF0u, channel = status & 0x0Fu;
    if (kind == 0xC0 || kind == 0xD0) {
      data_byte();
      continue;
    }
    const std::uint8_t d1 = data_byte();
    const std::uint8_t d2 = data_byte();
    if (kind == 0x90 && d2 > 0) {
      track.notes.push_back({tick, true, channel, d1, d2});
    } else if (kind == 0x80 || kind == 0x90) {
      track.notes.push_back({tick, false, channel, d1, 0});
    }
  }
  track.end_tick = tick;
  return track;
}

/// Tick -> seconds under a tempo map.
class TickClock {
 public:
  TickClock(const std::vector<TempoChange>& map, std::uint16_t tpq) : map_(map), tpq_(tpq) {
    double sec = 0.0;
    for (std::size_t i = 0; i < map_.size(); ++i) {
      if (i) sec += seconds_span(map_[i].tick - map_[i - 1].tick, map_[i - 1].us_per_quarter);
      starts_.push_back(sec);
    }
  }

  double seconds(std::uint64_t tick) const {
    auto it = std::upper_bound(map_.begin(), map_.end(), tick, [](std::uint64_t t, const TempoChange& c) { return t < c.tick; });
    const std::size_t i = static_cast<std::size_t>(std::distance(map_.begin(), it)) - 1;
    return starts_[i] + seconds_span(tick - map_[i].tick, map_[i].us_per_quarter);
  }

 private:
  double seconds_span(std::uint64_t ticks, std::uint32_t us) const {
    return static_cast<double>(ticks) * static_cast<double>(us) / (static_cast<double>(tpq_) * 1e6);
  }

  const std::vector<TempoChange>& map_;
  std::uint16_t tpq_;
  std::vector<double> starts_;
};

inline void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::array<std::uint8_t, 5> buf{};
  int n = 0;
  buf[n++] = v & 0x7F;
  while (v >>= 7) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
  while (n) out.push_back(buf[--n]);
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace detail

/// Parses an SMF (format 0 or 1) into seconds-domain notes.
///
/// Note-on with velocity 0 is a note-off. A repeated note-on for a sounding
/// (channel, pitch) closes the earlier note at the new onset. Pitches outside
/// the piano range are dropped and counted in `warnings`.
inline MidiScore parse_smf(std::span<const std::uint8_t> bytes, SmfWarnings* warnings = nullptr) {
  SmfWarnings local;
  SmfWarnings& warn = warnings ? *warnings : local;
  warn = {};
  detail::ByteReader r(bytes, 0);
  r.need(8, "header chunk");
  auto magic = r.take(4, "header chunk");
  if (!std::equal(magic.begin(), magic.end(), "MThd")) throw ParseError("missing MThd header", 0);
  const std::uint32_t header_len = r.u32("header length");
  if (header_len < 6) throw ParseError("header chunk length " + std::to_string(header_len) + " is shorter than 6", 4);
  const std::uint16_t format = r.u16("format");
  const std::uint16_t ntracks = r.u16("track count");
  const std::size_t division_at = r.offset();
  const std::uint16_t division = r.u16("division");
  r.take(header_len - 6, "header chunk");
  if (format == 2) throw ParseError("SMF format 2 is not supported", 8);
  if (format > 2) throw ParseError("unknown SMF format " + std::to_string(format), 8);
  if (division & 0x8000u) throw ParseError("SMPTE time division is not supported", division_at);
  if (division == 0) throw ParseError("ticks per quarter note must be positive", division_at);

  std::vector<TempoChange> tempos;
  std::vector<detail::RawTrack> tracks;
  while (!r.done()) {
    const std::size_t chunk_at = r.offset();
    auto id = r.take(4, "chunk header");
    const std::uint32_t len = r.u32("chunk length");
    if (len > r.remaining()) {
      throw ParseError("chunk length " + std::to_string(len) + " exceeds the " + std::to_string(r.remaining()) +
                           " bytes left",
                       chunk_at + 4);
    }
    auto body = r.take(len, "chunk body");
    if (std::equal(id.begin(), id.end(), "MTrk")) tracks.push_back(detail::parse_track(detail::ByteReader(body, chunk_at + 8), tempos));
  }
  if (tracks.size() < ntracks) throw ParseError("header declares " + std::to_string(ntracks) + " tracks, found " + std::to_string(tracks.size()), bytes.size());

  MidiScore score;
  score.ticks_per_quarter = division;
  std::stable_sort(tempos.begin(), tempos.end(), [](const TempoChange& a, const TempoChange& b) { return a.tick < b.tick; });
  score.tempo_map.clear();
  for (const auto& t : tempos) {
    if (!score.tempo_map.empty() && score.tempo_map.back().tick == t.tick) {
      score.tempo_map.back() = t;
    } else {
      score.tempo_map.push_back(t);
    }
  }
  if (score.tempo_map.empty() || score.tempo_map.front().tick != 0) score.tempo_map.insert(score.tempo_map.begin(), TempoChange{});

  detail::TickClock clock(score.tempo_map, division);
  auto emit = [&](std::uint64_t on, std::uint64_t off, int pitch, int velocity) {
    if (off <= on) {
      ++warn.zero_length;
      return;
    }
    if (pitch < kLowestPitch || pitch > kHighestPitch) {
      ++warn.out_of_range_pitch;
      return;
    }
    score.notes.push_back({clock.seconds(on), clock.seconds(off), pitch, velocity});
  };
  for (const auto& track : tracks) {
    std::map<std::pair<int, int>, std::pair<std::uint64_t, int>> open;  // (channel, pitch) -> (tick, velocity)
    for (const auto& ev : track.notes) {
      const auto key = std::make_pair(int(ev.channel), int(ev.pitch));
      auto it = open.find(key);
      if (ev.on) {
        if (it != open.end()) {
          emit(it->second.first, ev.tick, ev.pitch, it->second.second);
          open.erase(it);
        }
        open[key] = {ev.tick, ev.velocity};
      } else if (it != open.end()) {
        emit(it->second.first, ev.tick, ev.pitch, it->second.second);
        open.erase(it);
      } else {
        ++warn.stray_note_off;
      }
    }
    for (const auto& [key, start] : open) {
      ++warn.unterminated;
      emit(start.first, track.end_tick, key.second, start.second);
    }
  }
  sort_notes(score.notes);
  return score;
}

/// Single-track format-0 file at 480 ticks per quarter with one tempo event
/// (the score's first tempo). Running status is never used.
inline std::vector<std::uint8_t> write_smf(const MidiScore& score) {
  validate(score);
  const std::uint32_t tempo = score.tempo_map.front().us_per_quarter;
  const double ticks_per_sec = 1e6 / tempo * kWriterTicksPerQuarter;
  struct Ev {
    std::uint64_t tick;
    int order;  // offs before ons at the same tick
    int pitch, velocity;
  };
  std::vector<Ev> events;
  events.reserve(score.notes.size() * 2);
  for (const auto& n : score.notes) {
    const auto on = static_cast<std::uint64_t>(std::llround(n.onset_sec * ticks_per_sec));
    const auto off = std::max(on + 1, static_cast<std::uint64_t>(std::llround(n.offset_sec * ticks_per_sec)));
    events.push_back({on, 1, n.pitch, n.velocity});
    events.push_back({off, 0, n.pitch, 0});
  }
  std::stable_sort(events.begin(), events.end(), [](const Ev& a, const Ev& b) { return std::tie(a.tick, a.order) < std::tie(b.tick, b.order); });

  std::vector<std::uint8_t> track;
  detail::put_vlq(track, 0);
  track.insert(track.end(), {0xFF, 0x51, 0x03, static_cast<std::uint8_t>(tempo >> 16), static_cast<std::uint8_t>(tempo >> 8),
                             static_cast<std::uint8_t>(tempo)});
  std::uint64_t last = 0;
  for (const auto& e : events) {
    detail::put_vlq(track, static_cast<std::uint32_t>(e.tick - last));
    last = e.tick;
    track.push_back(e.order ? 0x90 : 0x80);
    track.push_back(static_cast<std::uint8_t>(e.pitch));
    track.push_back(static_cast<std::uint8_t>(e.velocity));
  }
  detail::put_vlq(track, 0);
  track.insert(track.end(), {0xFF, 0x2F, 0x00});

  std::vector<std::uint8_t> out{'M', 'T', 'h', 'd'};
  detail::put_u32(out, 6);
  detail::put_u16(out, 0);
  detail::put_u16(out, 1);
  detail::put_u16(out, kWriterTicksPerQuarter);
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  detail::put_u32(out, static_cast<std::uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

/// Notes intersecting [start_sec, end_sec), truncated to the window and
/// re-based so the window starts at 0.
inline MidiScore clip_score(const MidiScore& score, double start_sec, double end_sec) {
  if (!(end_sec > start_sec)) {
    throw DataError("clip window [" + std::to_string(start_sec) + ", " + std::to_string(end_sec) + "] is empty or inverted");
  }
  MidiScore out;
  out.ticks_per_quarter = score.ticks_per_quarter;
  // Keep the tempo in force at the window start.
  detail::TickClock clock(score.tempo_map, score.ticks_per_quarter);
  std::uint32_t tempo = score.tempo_map.front().us_per_quarter;
  for (const auto& t : score.tempo_map) {
    if (clock.seconds(t.tick) <= start_sec) tempo = t.us_per_quarter;
  }
  out.tempo_map = {TempoChange{0, tempo}};
  for (const auto& n : score.notes) {
    if (n.onset_sec >= end_sec || n.offset_sec <= start_sec) continue;
    Note c = n;
    c.onset_sec = std::max(n.onset_sec, start_sec) - start_sec;
    c.offset_sec = std::min(n.offset_sec, end_sec) - start_sec;
    if (c.offset_sec > c.onset_sec) out.notes.push_back(c);
  }
  sort_notes(out.notes);
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

inline MidiScore read_smf_file(const std::filesystem::path& path, SmfWarnings* warnings = nullptr) {
  const auto bytes = read_file_bytes(path);
  try {
    return parse_smf(bytes, warnings);
  } catch (const ParseError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_smf_file(const std::filesystem::path& path, const MidiScore& score) {
  write_file_bytes(path, write_smf(score));
}

}  // namespace vmt::midi
