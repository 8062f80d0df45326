#pragma once

// Container: 8-byte magic "VMTCKPT\n", u64 little-endian header length,
// JSON header, then raw little-endian values. Offsets in the header count
// values (not bytes) from the start of the payload.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmt/models/model.hpp"

namespace vmt::models {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in host byte order");

inline constexpr char kCheckpointMagic[8] = {'V', 'M', 'T', 'C', 'K', 'P', 'T', '\n'};
inline constexpr int kCheckpointVersion = 1;

/// Adam moments in parameter-store order plus the number of steps taken.
template <Real T>
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<std::string> names;
  std::vector<std::vector<T>> m, v;

  bool operator==(const OptimizerState&) const = default;
};

struct CheckpointMeta {
  std::uint64_t seed = 0;
  codec::CodecConfig codec;
  nlohmann::json extra = nlohmann::json::object();  // free-form (train config, metrics)
};

template <Real T>
struct LoadedCheckpoint {
  std::unique_ptr<Model<T>> model;
  CheckpointMeta meta;
  std::optional<OptimizerState<T>> optimizer;
};

namespace detail {

template <Real T>
void append_values(std::vector<char>& payload, std::span<const T> values) {
  const auto* bytes = reinterpret_cast<const char*>(values.data());
  payload.insert(payload.end(), bytes, bytes + values.size() * sizeof(T));
}

}  // namespace detail

/// Writes to a temporary sibling and renames, so an existing file survives
/// a failed write.
template <Real T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const CheckpointMeta& meta,
                     const OptimizerState<T>* optimizer = nullptr) {
  nlohmann::json header;
  header["format"] = "vmt-checkpoint";
  header["version"] = kCheckpointVersion;
  header["dtype"] = dtype_name<T>();
  header["config"] = to_json(model.config());
  header["seed"] = meta.seed;
  header["codec"] = {{"time_shift_bin_ms", meta.codec.time_shift_bin_ms}, {"clip_len_sec", meta.codec.clip_len_sec}};
  header["extra"] = meta.extra;

  std::vector<char> payload;
  std::size_t offset = 0;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, tensor] : model.params().entries()) {
    params.push_back({{"name", name}, {"shape", tensor.shape()}, {"offset", offset}});
    detail::append_values<T>(payload, tensor.data());
    offset += tensor.size();
  }
  header["params"] = params;
  if (optimizer) {
    nlohmann::json moments = nlohmann::json::array();
    for (std::size_t i = 0; i < optimizer->names.size(); ++i) {
      moments.push_back({{"name", optimizer->names[i]}, {"count", optimizer->m[i].size()}, {"m_offset", offset},
                         {"v_offset", offset + optimizer->m[i].size()}});
      detail::append_values<T>(payload, optimizer->m[i]);
      detail::append_values<T>(payload, optimizer->v[i]);
      offset += 2 * optimizer->m[i].size();
    }
    header["optimizer"] = {{"step", optimizer->step}, {"moments", moments}};
  }
  header["payload_values"] = offset;

  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    char len_bytes[8];
    for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<char>((len >> (8 * i)) & 0xFF);
    out.write(len_bytes, 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Rebuilds the model named in the header and fills every parameter from
/// the payload. The stored dtype must match T.
template <Real T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string() + ": ";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw CheckpointError(where + "not a checkpoint (bad magic)");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  if (len > bytes.size() - 16) throw CheckpointError(where + "header length " + std::to_string(len) + " runs past the end of the file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + "malformed header: " + e.what());
  }
  const char* payload = bytes.data() + 16 + len;
  const std::size_t payload_values = (bytes.size() - 16 - len) / sizeof(T);

  LoadedCheckpoint<T> out;
  try {
    if (header.value("format", std::string()) != "vmt-checkpoint") throw CheckpointError(where + "unknown format");
    const int version = header.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError(where + "checkpoint version " + std::to_string(version) + ", this build reads version " +
                            std::to_string(kCheckpointVersion));
    }
    const std::string dtype = header.at("dtype").get<std::string>();
    if (dtype != dtype_name<T>()) throw CheckpointError(where + "stored as " + dtype + ", requested " + dtype_name<T>());
    if (header.at("payload_values").get<std::size_t>() != payload_values) {
      throw CheckpointError(where + "payload holds " + std::to_string(payload_values) + " values, header expects " +
                            header.at("payload_values").dump());
    }
    const ModelConfig cfg = model_config_from_json(header.at("config"));
    out.meta.seed = header.at("seed").get<std::uint64_t>();
    out.meta.codec.time_shift_bin_ms = header.at("codec").at("time_shift_bin_ms").get<double>();
    out.meta.codec.clip_len_sec = header.at("codec").at("clip_len_sec").get<double>();
    out.meta.extra = header.value("extra", nlohmann::json::object());
    out.model = make_model<T>(cfg, out.meta.seed);

    auto read_values = [&](std::size_t offset, std::size_t count, const std::string& what) {
      if (offset + count > payload_values) throw CheckpointError(where + what + " lies outside the payload");
      std::vector<T> values(count);
      std::memcpy(values.data(), payload + offset * sizeof(T), count * sizeof(T));
      return values;
    };

    std::map<std::string, nlohmann::json> stored;
    for (const auto& p : header.at("params")) {
      const std::string name = p.at("name").get<std::string>();
      if (!stored.emplace(name, p).second) throw CheckpointError(where + "parameter '" + name + "' stored twice");
    }
    for (const auto& [name, tensor] : out.model->params().entries()) {
      const std::string key = name;
      std::map<std::string, nlohmann::json>::iterator it = stored.find(key);
      if (it == stored.end()) throw CheckpointError(where + "missing parameter '" + name + "'");
      const Shape shape = it->second.at("shape").get<Shape>();
      if (shape != tensor.shape()) {
        throw CheckpointError(where + "parameter '" + name + "' has shape " + vmt::to_string(shape) + ", model expects " +
                              vmt::to_string(tensor.shape()));
      }
      auto values = read_values(it->second.at("offset").get<std::size_t>(), tensor.size(), "parameter '" + name + "'");
      Tensor<T> target = tensor;
      std::copy(values.begin(), values.end(), target.mutable_data().begin());
      stored.erase(it);
    }
    if (!stored.empty()) throw CheckpointError(where + "unexpected parameter '" + stored.begin()->first + "'");

    if (header.contains("optimizer")) {
      OptimizerState<T> opt;
      opt.step = header["optimizer"].at("step").get<std::uint64_t>();
      for (const auto& mo : header["optimizer"].at("moments")) {
        const std::string name = mo.at("name").get<std::string>();
        const std::size_t count = mo.at("count").get<std::size_t>();
        opt.names.push_back(name);
        opt.m.push_back(read_values(mo.at("m_offset").get<std::size_t>(), count, "first moment of '" + name + "'"));
        opt.v.push_back(read_values(mo.at("v_offset").get<std::size_t>(), count, "second moment of '" + name + "'"));
      }
      out.optimizer = std::move(opt);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + "malformed header: " + e.what());
  } catch (const CheckpointError&) {
    throw;
  } catch (const DataError& e) {
    throw CheckpointError(where + e.what());
  }
  return out;
}

}  // namespace vmt::models
