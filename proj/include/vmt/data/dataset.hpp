#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmt/codec/performance.hpp"
#include "vmt/data/vmtf.hpp"
#include "vmt/tensor/random.hpp"

namespace vmt::data {

inline constexpr std::size_t kMaxTargetTokens = 1024;

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names{"train", "validation", "test"};
  return names;
}

struct ManifestEntry {
  std::string clip;  // relative to the manifest's directory unless absolute
  std::string midi;
  std::string split;
  std::string song_id;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::filesystem::path root;  // directory relative paths resolve against
  std::vector<ManifestEntry> entries;

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : root / path;
  }

  std::vector<std::size_t> split_indices(const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].split == split) out.push_back(i);
    }
    return out;
  }
};

/// Split names valid and each song confined to one split.
inline void check_splits(const Manifest& m) {
  std::map<std::string, std::string> song_split;
  for (const auto& e : m.entries) {
    const auto& names = split_names();
    if (std::find(names.begin(), names.end(), e.split) == names.end()) {
      throw DataError("entry " + e.clip + " has unknown split '" + e.split + "'");
    }
    if (e.song_id.empty()) throw DataError("entry " + e.clip + " has an empty song_id");
    auto [it, fresh] = song_split.emplace(e.song_id, e.split);
    if (!fresh && it->second != e.split) {
      throw DataError("song " + e.song_id + " appears in both " + it->second + " and " + e.split);
    }
  }
}

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"clip", e.clip}, {"midi", e.midi}, {"split", e.split}, {"song_id", e.song_id}});
  }
  return {{"entries", entries}};
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  check_splits(m);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(m).dump(2) << '\n';
}

/// Parses the manifest, checks splits, and checks that every referenced
/// file exists.
inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  Manifest m;
  m.root = path.parent_path();
  if (!doc.is_object() || !doc.contains("entries") || !doc["entries"].is_array()) {
    throw DataError(path.string() + ": expected an object with an \"entries\" array");
  }
  for (const auto& item : doc["entries"]) {
    ManifestEntry e;
    try {
      e.clip = item.at("clip").get<std::string>();
      e.midi = item.at("midi").get<std::string>();
      e.split = item.at("split").get<std::string>();
      e.song_id = item.at("song_id").get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(path.string() + ": malformed entry " + item.dump() + " (" + ex.what() + ")");
    }
    for (const auto& p : {e.clip, e.midi}) {
      if (!std::filesystem::exists(m.resolve(p))) throw DataError(path.string() + ": missing file " + m.resolve(p).string());
    }
    m.entries.push_back(std::move(e));
  }
  check_splits(m);
  return m;
}

/// A video fragment with its target event sequence (START ... END).
struct ClipPair {
  FrameClip clip;
  std::vector<codec::TokenId> tokens;
  std::string source_id;
};

inline void check_tokens(const std::vector<codec::TokenId>& tokens, const std::string& what) {
  if (tokens.size() < 2 || tokens.front() != codec::kStartId || tokens.back() != codec::kEndId) {
    throw DataError(what + ": token sequence must start with START and end with END");
  }
  if (tokens.size() > kMaxTargetTokens) {
    throw DataError(what + ": " + std::to_string(tokens.size()) + " tokens exceed the " + std::to_string(kMaxTargetTokens) + " cap");
  }
}

inline ClipPair load_pair(const Manifest& m, const ManifestEntry& e, const codec::CodecConfig& cfg = {}) {
  ClipPair pair;
  pair.clip = read_vmtf_file(m.resolve(e.clip));
  const auto midi_path = m.resolve(e.midi);
  const midi::MidiScore score = midi::read_smf_file(midi_path);
  try {
    pair.tokens = codec::encode(score, cfg);
  } catch (const DataError& ex) {
    throw DataError(midi_path.string() + ": " + ex.what());
  }
  check_tokens(pair.tokens, midi_path.string());
  pair.source_id = e.song_id;
  return pair;
}

inline std::vector<ClipPair> load_split(const Manifest& m, const std::string& split, const codec::CodecConfig& cfg = {}) {
  std::vector<ClipPair> out;
  for (std::size_t i : m.split_indices(split)) out.push_back(load_pair(m, m.entries[i], cfg));
  return out;
}

/// Full check of a manifest: files parse, MIDI is warning-free, encodes
/// within the cap and round-trips through decode with no warnings. Throws
/// DataError naming the first offending file; returns the entry count.
inline std::size_t validate_manifest(const std::filesystem::path& path, const codec::CodecConfig& cfg = {}) {
  const Manifest m = load_manifest(path);
  for (const auto& e : m.entries) {
    read_vmtf_file(m.resolve(e.clip));
    const auto midi_path = m.resolve(e.midi);
    midi::SmfWarnings sw;
    const auto score = midi::read_smf_file(midi_path, &sw);
    if (sw.total() != 0) throw DataError(midi_path.string() + ": " + std::to_string(sw.total()) + " SMF warnings");
    std::vector<codec::TokenId> tokens;
    try {
      tokens = codec::encode(score, cfg);
    } catch (const DataError& ex) {
      throw DataError(midi_path.string() + ": " + ex.what());
    }
    check_tokens(tokens, midi_path.string());
    const auto back = codec::decode(tokens, cfg);
    if (back.warnings.total() != 0) {
      throw DataError(midi_path.string() + ": token round-trip produced " + std::to_string(back.warnings.total()) + " warnings");
    }
  }
  return m.entries.size();
}

/// Token rows padded with END to the batch maximum; mask marks real tokens.
struct Batch {
  std::vector<std::size_t> items;  // indices into the split's pair list
  std::vector<std::vector<codec::TokenId>> tokens;
  std::vector<std::vector<std::uint8_t>> mask;
  std::size_t max_len = 0;

  std::size_t size() const { return items.size(); }
};

/// Seeded epoch-wise shuffling over `count` pairs. Batch `step` (0-based) is
/// a pure function of (seed, step), so a resumed run sees the same stream.
class BatchIterator {
 public:
  BatchIterator(const std::vector<ClipPair>& pairs, std::size_t batch_size, std::uint64_t seed)
      : pairs_(&pairs), batch_size_(batch_size), seed_(seed) {
    if (pairs.empty()) throw DataError("cannot batch an empty split");
    if (batch_size == 0) throw DataError("batch size must be positive");
  }

  std::size_t batches_per_epoch() const { return (pairs_->size() + batch_size_ - 1) / batch_size_; }

  std::vector<std::size_t> epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order(pairs_->size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::derive(seed_, epoch);
    rng.shuffle(order.begin(), order.end());
    return order;
  }

  Batch batch(std::size_t step) const {
    const std::size_t per = batches_per_epoch();
    const auto order = epoch_order(step / per);
    const std::size_t first = (step % per) * batch_size_;
    const std::size_t last = std::min(first + batch_size_, order.size());
    Batch b;
    for (std::size_t i = first; i < last; ++i) {
      b.items.push_back(order[i]);
      b.max_len = std::max(b.max_len, (*pairs_)[order[i]].tokens.size());
    }
    for (std::size_t idx : b.items) {
      auto row = (*pairs_)[idx].tokens;
      std::vector<std::uint8_t> mask(b.max_len, 0);
      std::fill(mask.begin(), mask.begin() + static_cast<long>(row.size()), 1);
      row.resize(b.max_len, codec::kEndId);
      b.tokens.push_back(std::move(row));
      b.mask.push_back(std::move(mask));
    }
    return b;
  }

  /// One epoch's batches in order.
  std::vector<Batch> epoch(std::size_t index) const {
    std::vector<Batch> out;
    for (std::size_t k = 0; k < batches_per_epoch(); ++k) out.push_back(batch(index * batches_per_epoch() + k));
    return out;
  }

 private:
  const std::vector<ClipPair>* pairs_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

}  // namespace vmt::data
