#include <gtest/gtest.h>

#include <cmath>

#include "../support/scores.hpp"
#include "vmt/midi/smf.hpp"

using namespace vmt;
using namespace vmt::midi;
using namespace vmt::fixtures;

namespace {

std::vector<std::uint8_t> one_note_file(std::uint32_t tempo) {
  auto body = join(tempo_event(0, tempo), channel_event(0, 0x90, 60, 64), channel_event(480, 0x80, 60, 0), end_of_track());
  return SmfBuilder().header(0, 1, 480).track(body).bytes;
}

}  // namespace

TEST(ParseSmf, SingleNoteAtDefaultTempo) {
  auto body = join(channel_event(0, 0x90, 60, 64), channel_event(480, 0x80, 60, 0), end_of_track());
  auto bytes = SmfBuilder().header(0, 1, 480).track(body).bytes;
  MidiScore s = parse_smf(bytes);
  ASSERT_EQ(s.notes.size(), 1u);
  EXPECT_EQ(s.notes[0], (Note{0.0, 0.5, 60, 64}));
  ASSERT_EQ(s.tempo_map.size(), 1u);
  EXPECT_EQ(s.tempo_map[0], (TempoChange{0, 500000}));
}

TEST(ParseSmf, EmptyTrack) {
  auto bytes = SmfBuilder().header(0, 1, 480).track(end_of_track()).bytes;
  EXPECT_TRUE(parse_smf(bytes).notes.empty());
}

TEST(ParseSmf, VelocityZeroIsNoteOffAndRunningStatus) {
  // 0x90 60 100, then running-status "60 0" closes it.
  std::vector<std::uint8_t> body = join(channel_event(0, 0x90, 60, 100), std::vector<std::uint8_t>{0x83, 0x60, 60, 0}, end_of_track());
  MidiScore s = parse_smf(SmfBuilder().header(0, 1, 480).track(body).bytes);
  ASSERT_EQ(s.notes.size(), 1u);
  EXPECT_DOUBLE_EQ(s.notes[0].offset_sec, 0.5);
  EXPECT_EQ(s.notes[0].velocity, 100);
}

TEST(ParseSmf, Format1TempoTrackAndTempoChange) {
  // Tempo track: 120 bpm, then 60 bpm from tick 480.
  auto tempo_track = join(tempo_event(0, 500000), tempo_event(480, 1000000), end_of_track());
  auto notes = join(channel_event(0, 0x90, 64, 90), channel_event(960, 0x80, 64, 0), end_of_track());
  MidiScore s = parse_smf(SmfBuilder().header(1, 2, 480).track(tempo_track).track(notes).bytes);
  ASSERT_EQ(s.notes.size(), 1u);
  EXPECT_DOUBLE_EQ(s.notes[0].offset_sec, 0.5 + 1.0);
  EXPECT_EQ(s.tempo_map.size(), 2u);
}

TEST(ParseSmf, OutOfRangePitchDroppedWithWarning) {
  auto body = join(channel_event(0, 0x90, 10, 64), channel_event(10, 0x80, 10, 0), channel_event(0, 0x90, 60, 64),
                   channel_event(10, 0x80, 60, 0), end_of_track());
  SmfWarnings w;
  MidiScore s = parse_smf(SmfBuilder().header(0, 1, 480).track(body).bytes, &w);
  EXPECT_EQ(s.notes.size(), 1u);
  EXPECT_EQ(w.out_of_range_pitch, 1u);
}

TEST(ParseSmf, SamePitchReonsetClosesEarlierNote) {
  auto body = join(channel_event(0, 0x90, 60, 64), channel_event(240, 0x90, 60, 70), channel_event(240, 0x80, 60, 0),
                   end_of_track());
  MidiScore s = parse_smf(SmfBuilder().header(0, 1, 480).track(body).bytes);
  ASSERT_EQ(s.notes.size(), 2u);
  EXPECT_DOUBLE_EQ(s.notes[0].offset_sec, 0.25);
  EXPECT_DOUBLE_EQ(s.notes[1].onset_sec, 0.25);
  EXPECT_DOUBLE_EQ(s.notes[1].offset_sec, 0.5);
}

TEST(ParseSmf, ErrorsCarryByteOffsets) {
  auto good = one_note_file(500000);
  EXPECT_THROW(parse_smf(std::vector<std::uint8_t>{'M', 'T', 'h'}), ParseError);

  auto format2 = SmfBuilder().header(2, 1, 480).track(end_of_track()).bytes;
  try {
    parse_smf(format2);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 8u);
    EXPECT_NE(std::string(e.what()).find("format 2"), std::string::npos);
  }

  auto long_chunk = good;
  long_chunk[21] = 0xFF;  // MTrk length low byte
  long_chunk[20] = 0xFF;
  try {
    parse_smf(long_chunk);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 18u);
  }

  // A delta time whose continuation bit runs off the end of the track.
  auto body = std::vector<std::uint8_t>{0x81, 0x82};
  try {
    parse_smf(SmfBuilder().header(0, 1, 480).track(body).bytes);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("variable-length"), std::string::npos);
    EXPECT_EQ(e.offset(), 22u);
  }
}

TEST(ParseSmf, DoublingTempoDoublesTimes) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::uint32_t tempo = 200000 + static_cast<std::uint32_t>(rng.below(600000));
    std::vector<std::uint8_t> body = tempo_event(0, tempo);
    for (int i = 0; i < 5; ++i) {
      auto on = channel_event(static_cast<std::uint32_t>(rng.below(300)), 0x90, static_cast<std::uint8_t>(40 + i), 80);
      auto off = channel_event(1 + static_cast<std::uint32_t>(rng.below(300)), 0x80, static_cast<std::uint8_t>(40 + i), 0);
      body = join(body, on, off);
    }
    body = join(body, end_of_track());
    std::vector<std::uint8_t> body2 = body;
    body2[4] = static_cast<std::uint8_t>((tempo * 2) >> 16);
    body2[5] = static_cast<std::uint8_t>((tempo * 2) >> 8);
    body2[6] = static_cast<std::uint8_t>(tempo * 2);
    auto a = parse_smf(SmfBuilder().header(0, 1, 96).track(body).bytes);
    auto b = parse_smf(SmfBuilder().header(0, 1, 96).track(body2).bytes);
    ASSERT_EQ(a.notes.size(), b.notes.size());
    for (std::size_t i = 0; i < a.notes.size(); ++i) {
      EXPECT_NEAR(b.notes[i].onset_sec, 2 * a.notes[i].onset_sec, 1e-12);
      EXPECT_NEAR(b.notes[i].offset_sec, 2 * a.notes[i].offset_sec, 1e-12);
    }
  }
}

TEST(ParseSmf, FuzzedInputsYieldValidNotesOrParseErrors) {
  const auto base = write_smf(random_score(99, 20));
  std::size_t parsed = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    Rng rng(seed);
    auto bytes = base;
    for (int k = 0; k < 4; ++k) bytes[rng.below(bytes.size())] = static_cast<std::uint8_t>(rng.below(256));
    if (rng.bernoulli(0.3)) bytes.resize(rng.below(bytes.size()));
    try {
      MidiScore s = parse_smf(bytes);
      ++parsed;
      for (const auto& n : s.notes) EXPECT_TRUE(is_valid(n));
      EXPECT_TRUE(std::is_sorted(s.notes.begin(), s.notes.end(), [](const Note& a, const Note& b) { return a.onset_sec < b.onset_sec; }));
    } catch (const ParseError&) {
    }
  }
  EXPECT_GT(parsed, 0u);
}

TEST(WriteSmf, SingleNoteBytes) {
  MidiScore s;
  s.notes = {{0.0, 0.5, 60, 64}};
  auto bytes = write_smf(s);
  ASSERT_GE(bytes.size(), 14u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MThd");
  EXPECT_EQ(bytes[7], 6);
  // Track: tempo meta (7 bytes), then delta 0 note-on, delta 480 (0x83 0x60) note-off.
  std::vector<std::uint8_t> expect_track = join(tempo_event(0, 500000), channel_event(0, 0x90, 60, 64),
                                                std::vector<std::uint8_t>{0x83, 0x60, 0x80, 60, 0}, end_of_track());
  EXPECT_EQ(std::vector<std::uint8_t>(bytes.begin() + 22, bytes.end()), expect_track);
}

TEST(WriteSmf, EmptyScoreIsHeaderTempoEnd) {
  auto bytes = write_smf(MidiScore{});
  EXPECT_EQ(bytes.size(), 14u + 8u + 7u + 4u);
  EXPECT_TRUE(parse_smf(bytes).notes.empty());
}

TEST(WriteSmf, RoundTripWithinHalfTick) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    MidiScore s = random_score(seed);
    Rng rng(seed + 1000);
    s.tempo_map = {TempoChange{0, 300000 + static_cast<std::uint32_t>(rng.below(700000))}};
    MidiScore back = parse_smf(write_smf(s));
    const double half_tick = s.tempo_map[0].us_per_quarter / 1e6 / 480 / 2;
    ASSERT_EQ(back.notes.size(), s.notes.size()) << "seed " << seed;
    EXPECT_EQ(back.tempo_map, s.tempo_map);
    auto a = by_pitch(s.notes), b = by_pitch(back.notes);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(b[i].pitch, a[i].pitch);
      EXPECT_EQ(b[i].velocity, a[i].velocity);
      EXPECT_LE(std::abs(b[i].onset_sec - a[i].onset_sec), half_tick + 1e-12);
      EXPECT_LE(std::abs(b[i].offset_sec - a[i].offset_sec), half_tick + 1e-12);
    }
  }
}

TEST(WriteSmf, RejectsInvalidScore) {
  MidiScore s;
  s.notes = {{0.5, 0.5, 60, 64}};
  EXPECT_THROW(write_smf(s), DataError);
}

TEST(ClipScore, SpecExamples) {
  MidiScore s;
  s.notes = {{1.0, 2.0, 60, 64}, {9.5, 10.5, 62, 64}, {11.0, 12.0, 64, 64}};
  MidiScore c = clip_score(s, 0, 10);
  ASSERT_EQ(c.notes.size(), 2u);
  EXPECT_EQ(c.notes[0], s.notes[0]);
  EXPECT_EQ(c.notes[1], (Note{9.5, 10.0, 62, 64}));
  MidiScore shifted = clip_score(s, 10, 20);
  ASSERT_EQ(shifted.notes.size(), 2u);
  EXPECT_DOUBLE_EQ(shifted.notes[0].offset_sec, 0.5);
  EXPECT_DOUBLE_EQ(shifted.notes[1].onset_sec, 1.0);
  EXPECT_THROW(clip_score(s, 5, 5), DataError);
  EXPECT_THROW(clip_score(s, 6, 5), DataError);
}
