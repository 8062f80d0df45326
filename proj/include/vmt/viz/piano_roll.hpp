#pragma once

#include <algorithm>
#include <cstdio>
#include <string>

#include "vmt/midi/smf.hpp"

namespace vmt::viz {

/// Plot area is [0, width] x [0, height] in SVG units; labels sit in a
/// margin outside it via the viewBox. Higher pitches are drawn higher.
struct RollSpec {
  int pitch_low = 36;   // C2, with C4 = 60
  int pitch_high = 96;  // C7
  double time_start = 0.0;
  double time_end = 10.0;
  double width = 1000.0;
  double height = 600.0;

  void validate() const {
    if (pitch_low > pitch_high) throw DataError("piano roll pitch range is empty");
    if (!(time_end > time_start)) throw DataError("piano roll time range is empty");
    if (!(width > 0.0 && height > 0.0)) throw DataError("piano roll canvas must have positive size");
  }

  int rows() const { return pitch_high - pitch_low + 1; }
  double row_height() const { return height / rows(); }
  double px_per_sec() const { return width / (time_end - time_start); }
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  std::string s = buf;
  while (s.back() == '0') s.pop_back();
  if (s.back() == '.') s.pop_back();
  return s == "-0" ? "0" : s;
}

inline std::string pitch_name(int pitch) {
  static const char* names[] = {"C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};
  return std::string(names[pitch % 12]) + std::to_string(pitch / 12 - 1);
}

}  // namespace detail

/// SVG piano roll: one <rect> per drawn note, opacity velocity/127. Notes
/// outside the pitch range are pinned to the nearest edge row and drawn
/// with a dashed outline; notes wholly outside the time range are skipped.
inline std::string piano_roll_svg(const midi::MidiScore& score, const RollSpec& spec = {}) {
  spec.validate();
  using detail::num;
  const double margin_left = 60, margin_bottom = 50, margin_top = 10, margin_right = 20;
  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" + num(spec.width + margin_left + margin_right) +
         "\" height=\"" + num(spec.height + margin_top + margin_bottom) + "\" viewBox=\"" + num(-margin_left) + " " +
         num(-margin_top) + " " + num(spec.width + margin_left + margin_right) + " " +
         num(spec.height + margin_top + margin_bottom) + "\">\n";

  out += "<g class=\"axes\" stroke=\"#444\" stroke-width=\"1\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<line x1=\"0\" y1=\"" + num(spec.height) + "\" x2=\"" + num(spec.width) + "\" y2=\"" + num(spec.height) + "\"/>\n";
  out += "<line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"" + num(spec.height) + "\"/>\n";
  const double span = spec.time_end - spec.time_start;
  const double tick = span <= 20 ? 1.0 : std::ceil(span / 20);
  for (double t = spec.time_start; t <= spec.time_end + 1e-9; t += tick) {
    const double x = (t - spec.time_start) * spec.px_per_sec();
    out += "<line x1=\"" + num(x) + "\" y1=\"" + num(spec.height) + "\" x2=\"" + num(x) + "\" y2=\"" + num(spec.height + 5) + "\"/>\n";
    out += "<text x=\"" + num(x) + "\" y=\"" + num(spec.height + 20) + "\" text-anchor=\"middle\" stroke=\"none\">" + num(t) + "</text>\n";
  }
  for (int p = spec.pitch_low; p <= spec.pitch_high; ++p) {
    if (p % 12 != 0) continue;
    const double y = (spec.pitch_high - p + 0.5) * spec.row_height();
    out += "<line x1=\"-5\" y1=\"" + num(y) + "\" x2=\"0\" y2=\"" + num(y) + "\"/>\n";
    out += "<text x=\"-8\" y=\"" + num(y + 4) + "\" text-anchor=\"end\" stroke=\"none\">" + detail::pitch_name(p) + "</text>\n";
  }
  out += "<text x=\"" + num(spec.width / 2) + "\" y=\"" + num(spec.height + 42) + "\" text-anchor=\"middle\" stroke=\"none\">seconds</text>\n";
  out += "<text x=\"" + num(-45) + "\" y=\"" + num(spec.height / 2) + "\" text-anchor=\"middle\" stroke=\"none\" transform=\"rotate(-90 " +
         num(-45) + " " + num(spec.height / 2) + ")\">pitch</text>\n";
  out += "</g>\n";

  out += "<g class=\"notes\" fill=\"#1f5fa8\">\n";
  for (const auto& n : score.notes) {
    if (n.offset_sec <= spec.time_start || n.onset_sec >= spec.time_end) continue;
    const bool clamped = n.pitch < spec.pitch_low || n.pitch > spec.pitch_high;
    const int row_pitch = std::clamp(n.pitch, spec.pitch_low, spec.pitch_high);
    const double t0 = std::max(n.onset_sec, spec.time_start), t1 = std::min(n.offset_sec, spec.time_end);
    const double x = (t0 - spec.time_start) * spec.px_per_sec();
    const double w = (t1 - t0) * spec.px_per_sec();
    const double y = (spec.pitch_high - row_pitch) * spec.row_height();
    out += "<rect class=\"note\" x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" +
           num(spec.row_height()) + "\" fill-opacity=\"" + num(std::clamp(n.velocity, 0, 127) / 127.0) + "\"";
    if (clamped) out += " stroke=\"#c0392b\" stroke-dasharray=\"4 2\"";
    out += "/>\n";
  }
  out += "</g>\n</svg>\n";
  return out;
}

}  // namespace vmt::viz
