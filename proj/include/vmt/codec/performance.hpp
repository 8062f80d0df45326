#pragma once

// Performance-event vocabulary: 88 NOTE_ON, 88 NOTE_OFF, 32 TIME_SHIFT,
// 100 VELOCITY, START and END, laid out as
//
//   0..87    NOTE_ON  pitch 21..108
//   88..175  NOTE_OFF pitch 21..108
//   176..207 TIME_SHIFT bins 1..32
//   208..307 VELOCITY bins 1..100
//   308      START
//   309      END

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vmt/error.hpp"
#include "vmt/midi/smf.hpp"

namespace vmt::codec {

using TokenId = std::uint16_t;

inline constexpr int kPitchCount = midi::kHighestPitch - midi::kLowestPitch + 1;  // 88
inline constexpr int kTimeShiftBins = 32;
inline constexpr int kVelocityBins = 100;
inline constexpr std::size_t kVocabSize = 2 * kPitchCount + kTimeShiftBins + kVelocityBins + 2;  // 310

inline constexpr TokenId kNoteOnBase = 0;
inline constexpr TokenId kNoteOffBase = kNoteOnBase + kPitchCount;
inline constexpr TokenId kTimeShiftBase = kNoteOffBase + kPitchCount;
inline constexpr TokenId kVelocityBase = kTimeShiftBase + kTimeShiftBins;
inline constexpr TokenId kStartId = kVelocityBase + kVelocityBins;
inline constexpr TokenId kEndId = kStartId + 1;

static_assert(kVocabSize == 310 && kEndId == 309);

constexpr std::size_t vocab_size() { return kVocabSize; }

enum class EventKind { NoteOn, NoteOff, TimeShift, Velocity, Start, End };

/// One vocabulary entry. `value` is the pitch, shift bin or velocity bin;
/// unused for START/END.
struct Token {
  EventKind kind = EventKind::Start;
  int value = 0;

  bool operator==(const Token&) const = default;

  static Token note_on(int pitch) { return {EventKind::NoteOn, pitch}; }
  static Token note_off(int pitch) { return {EventKind::NoteOff, pitch}; }
  static Token time_shift(int bin) { return {EventKind::TimeShift, bin}; }
  static Token velocity(int bin) { return {EventKind::Velocity, bin}; }
  static Token start() { return {EventKind::Start, 0}; }
  static Token end() { return {EventKind::End, 0}; }
};

inline TokenId token_to_id(const Token& t) {
  auto check = [&](int lo, int hi, const char* what) {
    if (t.value < lo || t.value > hi) {
      throw DataError(std::string(what) + " value " + std::to_string(t.value) + " outside [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "]");
    }
  };
  switch (t.kind) {
    case EventKind::NoteOn:
      check(midi::kLowestPitch, midi::kHighestPitch, "NOTE_ON");
      return static_cast<TokenId>(kNoteOnBase + t.value - midi::kLowestPitch);
    case EventKind::NoteOff:
      check(midi::kLowestPitch, midi::kHighestPitch, "NOTE_OFF");
      return static_cast<TokenId>(kNoteOffBase + t.value - midi::kLowestPitch);
    case EventKind::TimeShift:
      check(1, kTimeShiftBins, "TIME_SHIFT");
      return static_cast<TokenId>(kTimeShiftBase + t.value - 1);
    case EventKind::Velocity:
      check(1, kVelocityBins, "VELOCITY");
      return static_cast<TokenId>(kVelocityBase + t.value - 1);
    case EventKind::Start:
      return kStartId;
    case EventKind::End:
      return kEndId;
  }
  throw DataError("unknown token kind");
}

inline Token id_to_token(std::size_t id) {
  if (id >= kVocabSize) throw DataError("token id " + std::to_string(id) + " outside [0, " + std::to_string(kVocabSize) + ")");
  const int i = static_cast<int>(id);
  if (i < kNoteOffBase) return Token::note_on(i - kNoteOnBase + midi::kLowestPitch);
  if (i < kTimeShiftBase) return Token::note_off(i - kNoteOffBase + midi::kLowestPitch);
  if (i < kVelocityBase) return Token::time_shift(i - kTimeShiftBase + 1);
  if (i < kStartId) return Token::velocity(i - kVelocityBase + 1);
  return i == kStartId ? Token::start() : Token::end();
}

struct CodecConfig {
  double time_shift_bin_ms = 31.25;
  double clip_len_sec = 10.0;

  double bin_sec() const { return time_shift_bin_ms / 1000.0; }

  void validate() const {
    if (!(time_shift_bin_ms > 0.0)) throw DataError("time_shift_bin_ms must be positive");
    if (!(clip_len_sec > 0.0)) throw DataError("clip_len_sec must be positive");
    if (kTimeShiftBins * bin_sec() > clip_len_sec + 1e-12) {
      throw DataError("a full TIME_SHIFT (32 bins) must not exceed the clip length");
    }
  }
};

/// ceil(velocity * 100 / 127): 1..127 onto 1..100.
inline int velocity_to_bin(int velocity) {
  velocity = std::clamp(velocity, 1, 127);
  return (velocity * kVelocityBins + 126) / 127;
}

/// round(bin * 127 / 100).
inline int bin_to_velocity(int bin) {
  bin = std::clamp(bin, 1, kVelocityBins);
  return std::clamp(static_cast<int>(std::lround(bin * 127.0 / kVelocityBins)), 1, 127);
}

/// Serialises a score as START, events, END.
///
/// Note times are quantised to the nearest bin on the absolute clock, so
/// every gap is a whole number of bins (error <= bin/2 per time). Gaps are
/// written greedily as full 32-bin shifts plus a remainder. At equal times
/// NOTE_OFF precedes NOTE_ON, and VELOCITY is written only when the bin
/// changes.
inline std::vector<TokenId> encode(const midi::MidiScore& score, const CodecConfig& cfg = {}) {
  cfg.validate();
  const double bin = cfg.bin_sec();
  struct Span {
    long on, off;
    int pitch, velocity;
  };
  std::array<std::vector<Span>, 128> by_pitch;
  for (const auto& n : score.notes) {
    if (n.pitch < midi::kLowestPitch || n.pitch > midi::kHighestPitch) {
      throw DataError("pitch " + std::to_string(n.pitch) + " outside the piano range [21, 108]");
    }
    if (n.offset_sec > cfg.clip_len_sec + 1e-9 || n.onset_sec < 0.0) {
      throw DataError("note [" + std::to_string(n.onset_sec) + ", " + std::to_string(n.offset_sec) +
                      "] s lies outside the " + std::to_string(cfg.clip_len_sec) + " s clip");
    }
    by_pitch[static_cast<std::size_t>(n.pitch)].push_back(
        {std::lround(n.onset_sec / bin), std::lround(n.offset_sec / bin), n.pitch, n.velocity});
  }

  struct Event {
    long time;
    int order;  // 0 = off, 1 = on
    int pitch, velocity;
  };
  std::vector<Event> events;
  for (auto& spans : by_pitch) {
    std::stable_sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.on < b.on; });
    for (std::size_t i = 0; i < spans.size(); ++i) {
      Span s = spans[i];
      s.off = std::max(s.off, s.on + 1);
      if (i + 1 < spans.size()) s.off = std::min(s.off, spans[i + 1].on);  // same-pitch overlap closes early
      if (s.off <= s.on) continue;
      events.push_back({s.on, 1, s.pitch, s.velocity});
      events.push_back({s.off, 0, s.pitch, 0});
    }
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return std::tie(a.time, a.order, a.pitch) < std::tie(b.time, b.order, b.pitch);
  });

  std::vector<TokenId> out{kStartId};
  long clock = 0;
  int current_bin = -1;
  for (const auto& e : events) {
    for (long gap = e.time - clock; gap > 0; gap -= kTimeShiftBins) {
      out.push_back(token_to_id(Token::time_shift(static_cast<int>(std::min<long>(gap, kTimeShiftBins)))));
    }
    clock = e.time;
    if (e.order == 1) {
      const int vb = velocity_to_bin(e.velocity);
      if (vb != current_bin) {
        out.push_back(token_to_id(Token::velocity(vb)));
        current_bin = vb;
      }
      out.push_back(token_to_id(Token::note_on(e.pitch)));
    } else {
      out.push_back(token_to_id(Token::note_off(e.pitch)));
    }
  }
  out.push_back(kEndId);
  return out;
}

/// Malformations tolerated while decoding.
struct DecodeWarnings {
  std::size_t unmatched_note_on = 0;   // still open at the end; the note is removed
  std::size_t unmatched_note_off = 0;  // nothing open for that pitch
  std::size_t duplicate_note_on = 0;   // re-opened a sounding pitch; the earlier note is closed
  std::size_t zero_length = 0;         // closed with no elapsed time; dropped
  std::size_t truncated = 0;           // ran past the clip end; cut or dropped
  std::size_t misplaced_start = 0;     // START anywhere but first
  std::size_t invalid_id = 0;          // id outside the vocabulary
  std::size_t missing_end = 0;         // sequence ran out without END

  std::size_t total() const {
    return unmatched_note_on + unmatched_note_off + duplicate_note_on + zero_length + truncated + misplaced_start +
           invalid_id + missing_end;
  }
};

struct DecodeResult {
  midi::MidiScore score;
  DecodeWarnings warnings;
};

/// Replays a token stream into a score. Total: never throws on token
/// content, every oddity becomes a warning. Tokens after END are ignored.
template <typename Id>
DecodeResult decode(std::span<const Id> tokens, const CodecConfig& cfg = {}) {
  cfg.validate();
  const double bin = cfg.bin_sec();
  DecodeResult res;
  auto& w = res.warnings;
  long clock = 0;
  int velocity_bin = 64;
  std::array<std::optional<std::pair<long, int>>, 128> open;  // pitch -> (onset bins, velocity)
  auto close = [&](int pitch) {
    auto& slot = open[static_cast<std::size_t>(pitch)];
    const auto [on, vel] = *slot;
    slot.reset();
    if (clock <= on) {
      ++w.zero_length;
      return;
    }
    midi::Note n{static_cast<double>(on) * bin, static_cast<double>(clock) * bin, pitch, vel};
    if (n.onset_sec >= cfg.clip_len_sec) {
      ++w.truncated;
      return;
    }
    if (n.offset_sec > cfg.clip_len_sec) {
      n.offset_sec = cfg.clip_len_sec;
      ++w.truncated;
    }
    res.score.notes.push_back(n);
  };
  bool ended = false;
  for (std::size_t i = 0; i < tokens.size() && !ended; ++i) {
    const auto raw = static_cast<std::size_t>(tokens[i]);
    if (raw >= kVocabSize) {
      ++w.invalid_id;
      continue;
    }
    const Token t = id_to_token(raw);
    switch (t.kind) {
      case EventKind::Start:
        if (i != 0) ++w.misplaced_start;
        break;
      case EventKind::End:
        ended = true;
        break;
      case EventKind::TimeShift:
        clock += t.value;
        break;
      case EventKind::Velocity:
        velocity_bin = t.value;
        break;
      case EventKind::NoteOn:
        if (open[static_cast<std::size_t>(t.value)]) {
          ++w.duplicate_note_on;
          close(t.value);
        }
        open[static_cast<std::size_t>(t.value)] = std::make_pair(clock, bin_to_velocity(velocity_bin));
        break;
      case EventKind::NoteOff:
        if (open[static_cast<std::size_t>(t.value)]) {
          close(t.value);
        } else {
          ++w.unmatched_note_off;
        }
        break;
    }
  }
  for (const auto& slot : open) {
    if (slot) ++w.unmatched_note_on;
  }
  if (!ended) ++w.missing_end;
  midi::sort_notes(res.score.notes);
  return res;
}

inline DecodeResult decode(const std::vector<TokenId>& tokens, const CodecConfig& cfg = {}) {
  return decode(std::span<const TokenId>(tokens), cfg);
}

// ---------------------------------------------------------------------------
// Debug text format: one mnemonic per line, e.g. "NOTE_ON 60".

inline std::string to_text(const Token& t) {
  switch (t.kind) {
    case EventKind::NoteOn:
      return "NOTE_ON " + std::to_string(t.value);
    case EventKind::NoteOff:
      return "NOTE_OFF " + std::to_string(t.value);
    case EventKind::TimeShift:
      return "TIME_SHIFT " + std::to_string(t.value);
    case EventKind::Velocity:
      return "VELOCITY " + std::to_string(t.value);
    case EventKind::Start:
      return "START";
    case EventKind::End:
      return "END";
  }
  return "?";
}

inline Token token_from_text(const std::string& line) {
  std::istringstream in(line);
  std::string name;
  in >> name;
  auto value = [&]() {
    int v = 0;
    if (!(in >> v)) throw DataError("token '" + line + "' is missing its value");
    return v;
  };
  Token t;
  if (name == "NOTE_ON") {
    t = Token::note_on(value());
  } else if (name == "NOTE_OFF") {
    t = Token::note_off(value());
  } else if (name == "TIME_SHIFT") {
    t = Token::time_shift(value());
  } else if (name == "VELOCITY") {
    t = Token::velocity(value());
  } else if (name == "START") {
    t = Token::start();
  } else if (name == "END") {
    t = Token::end();
  } else {
    throw DataError("unknown token '" + line + "'");
  }
  std::string rest;
  if (in >> rest) throw DataError("trailing text in token '" + line + "'");
  token_to_id(t);  // range check
  return t;
}

inline std::string tokens_to_text(std::span<const TokenId> ids) {
  std::string out;
  for (TokenId id : ids) out += to_text(id_to_token(id)) + "\n";
  return out;
}

/// Blank lines and lines starting with '#' are skipped.
inline std::vector<TokenId> tokens_from_text(const std::string& text) {
  std::vector<TokenId> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    try {
      out.push_back(token_to_id(token_from_text(line)));
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace vmt::codec
