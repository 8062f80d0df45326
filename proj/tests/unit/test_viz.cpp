#include <gtest/gtest.h>

#include <regex>

#include "vmt/viz/piano_roll.hpp"

using namespace vmt;
using vmt::midi::MidiScore;
using vmt::midi::Note;

namespace {

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

MidiScore score_of(std::vector<Note> notes) {
  MidiScore s;
  s.notes = std::move(notes);
  return s;
}

}  // namespace

TEST(PianoRoll, EmptyScoreHasAxesOnly) {
  const auto svg = viz::piano_roll_svg(MidiScore{});
  EXPECT_EQ(count(svg, "<rect"), 0u);
  EXPECT_NE(svg.find(">seconds<"), std::string::npos);
  EXPECT_NE(svg.find(">pitch<"), std::string::npos);
  EXPECT_NE(svg.find(">C2<"), std::string::npos);
  EXPECT_NE(svg.find(">C7<"), std::string::npos);
  EXPECT_NE(svg.find(">10<"), std::string::npos);
}

TEST(PianoRoll, TimeScaleIsHundredPixelsPerSecond) {
  const auto svg = viz::piano_roll_svg(score_of({{0.0, 0.5, 60, 64}}));
  EXPECT_EQ(count(svg, "<rect"), 1u);
  EXPECT_NE(svg.find("x=\"0\""), std::string::npos);
  EXPECT_NE(svg.find("width=\"50\""), std::string::npos);
  // Row of pitch 60 counted down from 96, 600 / 61 px per row.
  char y[32];
  std::snprintf(y, sizeof y, "y=\"%.3f\"", 36 * 600.0 / 61);
  EXPECT_NE(svg.find(y), std::string::npos) << svg;
  EXPECT_NE(svg.find("fill-opacity=\"0.504\""), std::string::npos);
}

TEST(PianoRoll, ClampedNotesAreDashed) {
  const auto svg = viz::piano_roll_svg(score_of({{1.0, 2.0, 20, 100}, {1.0, 2.0, 70, 100}, {3.0, 4.0, 120, 127}}));
  EXPECT_EQ(count(svg, "class=\"note\""), 3u);
  EXPECT_EQ(count(svg, "stroke-dasharray"), 2u);
  EXPECT_NE(svg.find("y=\"0\" width=\"100\""), std::string::npos);
  EXPECT_NE(svg.find("fill-opacity=\"1\""), std::string::npos);
}

TEST(PianoRoll, NotesOutsideTimeRangeAreSkippedOrCut) {
  const auto svg = viz::piano_roll_svg(score_of({{10.5, 11.0, 60, 64}, {9.5, 12.0, 60, 64}}));
  EXPECT_EQ(count(svg, "class=\"note\""), 1u);
  EXPECT_NE(svg.find("x=\"950\""), std::string::npos);
  EXPECT_NE(svg.find("width=\"50\""), std::string::npos);
}

TEST(PianoRoll, DeterministicAndValidated) {
  const auto s = score_of({{0.25, 1.75, 48, 90}, {2.0, 2.125, 84, 30}});
  EXPECT_EQ(viz::piano_roll_svg(s), viz::piano_roll_svg(s));
  viz::RollSpec bad;
  bad.pitch_low = 90;
  bad.pitch_high = 80;
  EXPECT_THROW(viz::piano_roll_svg(s, bad), DataError);
  const std::regex rect("<rect ");
  const auto svg = viz::piano_roll_svg(s);
  EXPECT_EQ(std::distance(std::sregex_iterator(svg.begin(), svg.end(), rect), std::sregex_iterator()), 2);
}
