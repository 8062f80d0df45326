#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmt/data/vmtf.hpp"
#include "vmt/models/model.hpp"

namespace vmt::infer {

enum class DecodeMode { Greedy, Sample };

inline DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "greedy") return DecodeMode::Greedy;
  if (s == "sample") return DecodeMode::Sample;
  throw DataError("unknown decoding mode '" + s + "' (expected greedy or sample)");
}

struct GenConfig {
  DecodeMode mode = DecodeMode::Greedy;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t max_len = 1024;  // tokens fed to the decoder, START included

  void validate(const models::ModelConfig& model) const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw DataError("temperature must be a positive number");
    if (max_len < 1) throw DataError("max_len must be at least 1");
    if (max_len > model.max_target_len) {
      throw DataError("max_len " + std::to_string(max_len) + " exceeds the model's max_target_len " + std::to_string(model.max_target_len));
    }
  }
};

/// Index of the largest logit; the lowest index wins ties.
template <Real T>
std::size_t argmax(const std::vector<T>& logits) {
  return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

/// Draws from softmax(logits / temperature), computed in double.
template <Real T>
std::size_t sample(const std::vector<T>& logits, double temperature, Rng& rng) {
  const double mx = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
  std::vector<double> w(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    w[i] = std::exp((static_cast<double>(logits[i]) - mx) / temperature);
    total += w[i];
  }
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  return argmax(logits);  // rounding left u past the end
}

/// [START, y1, ..., END]. Stops at END or once max_len tokens have been fed
/// to the decoder, in which case END is appended; so at most max_len + 1
/// tokens come back.
template <Real T>
std::vector<codec::TokenId> generate_from_vectors(const models::Model<T>& model, const Tensor<T>& frame_vecs, const GenConfig& cfg) {
  cfg.validate(model.config());
  auto session = model.start_session(frame_vecs);
  Rng rng(cfg.seed);
  std::vector<codec::TokenId> out{codec::kStartId};
  while (out.size() <= cfg.max_len) {
    if (out.size() == cfg.max_len) {
      out.push_back(codec::kEndId);
      break;
    }
    const auto logits = session->step(out.back());
    const std::size_t next = cfg.mode == DecodeMode::Greedy ? argmax(logits) : sample(logits, cfg.temperature, rng);
    out.push_back(static_cast<codec::TokenId>(next));
    if (next == codec::kEndId) break;
  }
  return out;
}

template <Real T>
std::vector<codec::TokenId> generate(const models::Model<T>& model, const data::FrameClip& clip, const GenConfig& cfg) {
  Tensor<T> frame_vecs;
  {
    NoGradGuard no_grad;
    frame_vecs = model.encode_frames(data::normalize<T>(clip));
  }
  return generate_from_vectors(model, frame_vecs, cfg);
}

struct GeneratedMidi {
  std::vector<codec::TokenId> tokens;
  midi::MidiScore score;
  codec::DecodeWarnings warnings;
  double duration_sec = 0.0;
  bool ended_naturally = false;  // END produced by the model, not forced at the cap

  nlohmann::json report() const {
    return {{"tokens", tokens.size()},
            {"duration_sec", duration_sec},
            {"notes", score.notes.size()},
            {"ended_naturally", ended_naturally},
            {"warnings",
             {{"unmatched_note_on", warnings.unmatched_note_on},
              {"unmatched_note_off", warnings.unmatched_note_off},
              {"duplicate_note_on", warnings.duplicate_note_on},
              {"zero_length", warnings.zero_length},
              {"truncated", warnings.truncated},
              {"misplaced_start", warnings.misplaced_start},
              {"invalid_id", warnings.invalid_id},
              {"missing_end", warnings.missing_end},
              {"total", warnings.total()}}}};
  }
};

inline GeneratedMidi to_midi(std::vector<codec::TokenId> tokens, std::size_t max_len, const codec::CodecConfig& codec = {}) {
  GeneratedMidi g;
  g.ended_naturally = tokens.size() <= max_len && !tokens.empty() && tokens.back() == codec::kEndId;
  auto decoded = codec::decode(tokens, codec);
  g.tokens = std::move(tokens);
  g.score = std::move(decoded.score);
  g.warnings = decoded.warnings;
  g.duration_sec = std::min(g.score.duration_sec(), codec.clip_len_sec);
  return g;
}

/// Generation decoded to a score clipped to the clip length, with the
/// decoder's warning counts.
template <Real T>
GeneratedMidi generate_midi(const models::Model<T>& model, const data::FrameClip& clip, const GenConfig& cfg,
                            const codec::CodecConfig& codec = {}) {
  return to_midi(generate(model, clip, cfg), cfg.max_len, codec);
}

}  // namespace vmt::infer
