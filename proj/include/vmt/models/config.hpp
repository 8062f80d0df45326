#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmt/error.hpp"
#include "vmt/nn/attention.hpp"
#include "vmt/nn/conv_encoder.hpp"

namespace vmt::models {

enum class ModelKind { Seq2Seq, Vmt };

inline std::string to_string(ModelKind k) { return k == ModelKind::Seq2Seq ? "seq2seq" : "vmt"; }

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "seq2seq") return ModelKind::Seq2Seq;
  if (s == "vmt") return ModelKind::Vmt;
  throw DataError("unknown model kind '" + s + "' (expected seq2seq or vmt)");
}

inline std::string to_string(nn::CrossAttentionMode m) { return m == nn::CrossAttentionMode::Standard ? "standard" : "paper_literal"; }

inline nn::CrossAttentionMode parse_cross_attention_mode(const std::string& s) {
  if (s == "standard") return nn::CrossAttentionMode::Standard;
  if (s == "paper_literal") return nn::CrossAttentionMode::PaperLiteral;
  throw DataError("unknown cross_attention_mode '" + s + "' (expected standard or paper_literal)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::Vmt;
  std::size_t hidden = 512;
  std::size_t enc_layers = 6;
  std::size_t dec_layers = 6;
  std::size_t heads = 8;
  std::size_t d_ff = 2048;
  double dropout = 0.1;
  std::size_t max_target_len = 1024;
  nn::CrossAttentionMode cross_attention_mode = nn::CrossAttentionMode::Standard;
  std::vector<std::size_t> conv_channels = nn::conv_channel_plan();  // last entry must equal hidden

  /// Full-size configuration.
  static ModelConfig full(ModelKind kind) {
    ModelConfig c;
    c.kind = kind;
    if (kind == ModelKind::Seq2Seq) c.enc_layers = c.dec_layers = 3;
    return c;
  }

  /// Desk-scale configuration: H=64, 2+2 layers, 4 heads, d_ff=256.
  static ModelConfig reduced(ModelKind kind) {
    ModelConfig c;
    c.kind = kind;
    c.hidden = 64;
    c.enc_layers = c.dec_layers = 2;
    c.heads = 4;
    c.d_ff = 256;
    c.conv_channels = {4, 8, 64};
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw DataError("model config: " + m); };
    if (hidden == 0 || hidden % 2 != 0) fail("hidden size must be positive and even, got " + std::to_string(hidden));
    if (heads == 0 || hidden % heads != 0) fail("heads (" + std::to_string(heads) + ") must divide hidden (" + std::to_string(hidden) + ")");
    if (enc_layers == 0 || dec_layers == 0) fail("layer counts must be positive");
    if (kind == ModelKind::Seq2Seq && enc_layers != dec_layers) fail("seq2seq shares GRU layers, so enc_layers must equal dec_layers");
    if (d_ff == 0) fail("d_ff must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1), got " + std::to_string(dropout));
    if (max_target_len < 2) fail("max_target_len must be at least 2");
    if (conv_channels.empty()) fail("conv_channels is empty");
    for (std::size_t c : conv_channels) {
      if (c == 0) fail("conv channel counts must be positive");
    }
    if (conv_channels.back() != hidden) {
      fail("last conv channel count (" + std::to_string(conv_channels.back()) + ") must equal hidden (" + std::to_string(hidden) + ")");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"hidden", c.hidden},
          {"enc_layers", c.enc_layers},
          {"dec_layers", c.dec_layers},
          {"heads", c.heads},
          {"d_ff", c.d_ff},
          {"dropout", c.dropout},
          {"max_target_len", c.max_target_len},
          {"cross_attention_mode", to_string(c.cross_attention_mode)},
          {"conv_channels", c.conv_channels}};
}

/// Missing keys fall back to the preset picked by "preset" ("full" unless
/// given) for the stated kind.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    const ModelKind kind = parse_model_kind(j.value("kind", std::string("vmt")));
    const std::string preset = j.value("preset", std::string("full"));
    ModelConfig c;
    if (preset == "full") {
      c = ModelConfig::full(kind);
    } else if (preset == "reduced") {
      c = ModelConfig::reduced(kind);
    } else {
      throw DataError("unknown preset '" + preset + "' (expected full or reduced)");
    }
    for (const auto& [key, value] : j.items()) {
      if (key == "kind" || key == "preset") continue;
      if (key == "hidden") c.hidden = value.get<std::size_t>();
      else if (key == "enc_layers") c.enc_layers = value.get<std::size_t>();
      else if (key == "dec_layers") c.dec_layers = value.get<std::size_t>();
      else if (key == "heads") c.heads = value.get<std::size_t>();
      else if (key == "d_ff") c.d_ff = value.get<std::size_t>();
      else if (key == "dropout") c.dropout = value.get<double>();
      else if (key == "max_target_len") c.max_target_len = value.get<std::size_t>();
      else if (key == "cross_attention_mode") c.cross_attention_mode = parse_cross_attention_mode(value.get<std::string>());
      else if (key == "conv_channels") c.conv_channels = value.get<std::vector<std::size_t>>();
      else throw DataError("model config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model config: ") + e.what());
  }
}

}  // namespace vmt::models
