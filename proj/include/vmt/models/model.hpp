#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vmt/codec/performance.hpp"
#include "vmt/models/config.hpp"
#include "vmt/nn/attention.hpp"
#include "vmt/nn/conv_encoder.hpp"
#include "vmt/nn/embedding.hpp"
#include "vmt/nn/feed_forward.hpp"
#include "vmt/nn/gru.hpp"

namespace vmt::models {

using codec::TokenId;

/// Incremental decoder state for one clip. Each call feeds the next input
/// token (START first) and returns the logits for the position after it.
template <Real T>
class DecoderSession {
 public:
  virtual ~DecoderSession() = default;
  virtual std::vector<T> step(TokenId token) = 0;
  std::size_t position() const { return pos_; }

 protected:
  std::size_t pos_ = 0;
};

/// Conv frame encoder plus a sequence model over the frame vectors.
template <Real T>
class Model {
 public:
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  virtual ~Model() = default;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }
  const nn::ConvFrameEncoder<T>& conv() const { return *conv_; }

  /// [40, 3, 128, 128] -> frame vectors [40, H].
  Tensor<T> encode_frames(const Tensor<T>& clip) const { return (*conv_)(clip); }

  /// Teacher-forced logits [len, 310] for target_in = [START, y1, ...].
  virtual Tensor<T> forward(const Tensor<T>& frame_vecs, std::span<const TokenId> target_in,
                            const nn::ForwardContext& ctx = {}) const = 0;

  Tensor<T> logits(const Tensor<T>& clip, std::span<const TokenId> target_in, const nn::ForwardContext& ctx = {}) const {
    return forward(encode_frames(clip), target_in, ctx);
  }

  /// Evaluation-mode incremental decoding over fixed frame vectors.
  virtual std::unique_ptr<DecoderSession<T>> start_session(const Tensor<T>& frame_vecs) const = 0;

 protected:
  Model(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    conv_ = std::make_unique<nn::ConvFrameEncoder<T>>(store_, "conv", cfg_.conv_channels, rng);
  }

  void check_inputs(const Tensor<T>& frame_vecs, std::span<const TokenId> target_in) const {
    if (frame_vecs.rank() != 2 || frame_vecs.dim(1) != cfg_.hidden) {
      throw ShapeError("frame vectors must be [frames, " + std::to_string(cfg_.hidden) + "], got " + vmt::to_string(frame_vecs.shape()));
    }
    if (target_in.empty()) throw ShapeError("empty decoder input");
    if (target_in.size() > cfg_.max_target_len) {
      throw ShapeError("decoder input of " + std::to_string(target_in.size()) + " tokens exceeds max_target_len " +
                       std::to_string(cfg_.max_target_len));
    }
  }

  void check_position(std::size_t pos) const {
    if (pos >= cfg_.max_target_len) {
      throw ShapeError("decoder position " + std::to_string(pos) + " reaches max_target_len " + std::to_string(cfg_.max_target_len));
    }
  }

  Tensor<T> project_out(const Tensor<T>& hidden) const { return matmul(hidden, out_w_) + out_b_; }

  void make_output(Rng& rng) {
    out_w_ = store_.add("out.w", {cfg_.hidden, codec::kVocabSize}, nn::Init::XavierUniform, rng);
    out_b_ = store_.add("out.b", {codec::kVocabSize}, nn::Init::Zeros, rng);
  }

  static std::vector<T> row_values(const Tensor<T>& t) { return {t.data().begin(), t.data().end()}; }

  ModelConfig cfg_;
  nn::ParamStore<T> store_;
  std::unique_ptr<nn::ConvFrameEncoder<T>> conv_;
  Tensor<T> out_w_, out_b_;
};

// ---------------------------------------------------------------------------

/// Transformer encoder-decoder with post-norm residual sublayers.
template <Real T>
class VideoMusicTransformer final : public Model<T> {
  using Base = Model<T>;

 public:
  struct EncoderLayer {
    nn::MultiHeadAttention<T> self;
    nn::NormParams<T> norm1;
    nn::FeedForward<T> ffn;
    nn::NormParams<T> norm2;
  };
  struct DecoderLayer {
    nn::MultiHeadAttention<T> self;
    nn::NormParams<T> norm1;
    nn::MultiHeadAttention<T> cross;
    nn::NormParams<T> norm2;
    nn::FeedForward<T> ffn;
    nn::NormParams<T> norm3;
  };

  VideoMusicTransformer(const ModelConfig& cfg, Rng& rng) : Base(cfg, rng) {
    const auto& c = this->cfg_;
    auto& s = this->store_;
    for (std::size_t l = 0; l < c.enc_layers; ++l) {
      const std::string p = "enc" + std::to_string(l);
      enc_.push_back({nn::MultiHeadAttention<T>::create(s, p + ".self", c.hidden, c.heads, rng),
                      nn::NormParams<T>::create(s, p + ".norm1", c.hidden, rng),
                      nn::FeedForward<T>::create(s, p + ".ffn", c.hidden, c.d_ff, rng),
                      nn::NormParams<T>::create(s, p + ".norm2", c.hidden, rng)});
    }
    embed_ = nn::Embedding<T>::create(s, "embed", c.hidden, codec::kVocabSize, rng);
    for (std::size_t l = 0; l < c.dec_layers; ++l) {
      const std::string p = "dec" + std::to_string(l);
      dec_.push_back({nn::MultiHeadAttention<T>::create(s, p + ".self", c.hidden, c.heads, rng),
                      nn::NormParams<T>::create(s, p + ".norm1", c.hidden, rng),
                      nn::MultiHeadAttention<T>::create(s, p + ".cross", c.hidden, c.heads, rng),
                      nn::NormParams<T>::create(s, p + ".norm2", c.hidden, rng),
                      nn::FeedForward<T>::create(s, p + ".ffn", c.hidden, c.d_ff, rng),
                      nn::NormParams<T>::create(s, p + ".norm3", c.hidden, rng)});
    }
    this->make_output(rng);
  }

  /// Encoder output z^enc [frames, H].
  Tensor<T> encode(const Tensor<T>& frame_vecs, const nn::ForwardContext& ctx) const {
    Tensor<T> x = ctx.drop(frame_vecs + nn::positional_encoding<T>(frame_vecs.dim(0), this->cfg_.hidden));
    for (const auto& layer : enc_) {
      x = layer.norm1(x + ctx.drop(layer.self.self_attention(x, false, ctx)));
      x = layer.norm2(x + ctx.drop(layer.ffn(x)));
    }
    return x;
  }

  Tensor<T> forward(const Tensor<T>& frame_vecs, std::span<const TokenId> target_in,
                    const nn::ForwardContext& ctx = {}) const override {
    this->check_inputs(frame_vecs, target_in);
    const Tensor<T> z = encode(frame_vecs, ctx);
    Tensor<T> y = ctx.drop(embed_(target_in) + nn::positional_encoding<T>(target_in.size(), this->cfg_.hidden));
    const auto mode = this->cfg_.cross_attention_mode;
    for (const auto& layer : dec_) {
      y = layer.norm1(y + ctx.drop(layer.self.self_attention(y, true, ctx)));
      y = layer.norm2(y + ctx.drop(layer.cross.cross_attention(y, z, mode, ctx)));
      y = layer.norm3(y + ctx.drop(layer.ffn(y)));
    }
    return this->project_out(y);
  }

  std::unique_ptr<DecoderSession<T>> start_session(const Tensor<T>& frame_vecs) const override {
    return std::make_unique<Session>(*this, frame_vecs);
  }

  const std::vector<EncoderLayer>& encoder_layers() const { return enc_; }
  const std::vector<DecoderLayer>& decoder_layers() const { return dec_; }

 private:
  // Keys and values of earlier positions are cached per layer; cross
  // attention terms that depend only on the encoder are computed once.
  class Session final : public DecoderSession<T> {
   public:
    Session(const VideoMusicTransformer& m, const Tensor<T>& frame_vecs) : m_(m) {
      NoGradGuard no_grad;
      m_.check_inputs(frame_vecs, std::vector<TokenId>{codec::kStartId});
      const Tensor<T> z = m_.encode(frame_vecs, {});
      for (const auto& layer : m_.dec_) {
        Cache c;
        if (m_.cfg_.cross_attention_mode == nn::CrossAttentionMode::Standard) {
          c.cross_k = matmul(z, layer.cross.w_k);
          c.cross_v = matmul(z, layer.cross.w_v);
        } else {
          c.literal = layer.cross.literal_weights(z, {});
        }
        caches_.push_back(std::move(c));
      }
    }

    std::vector<T> step(TokenId token) override {
      m_.check_position(this->pos_);
      NoGradGuard no_grad;
      const nn::ForwardContext eval;
      const TokenId ids[1] = {token};
      Tensor<T> x = m_.embed_(ids) + nn::positional_encoding<T>(1, m_.cfg_.hidden, this->pos_);
      for (std::size_t l = 0; l < m_.dec_.size(); ++l) {
        const auto& layer = m_.dec_[l];
        auto& c = caches_[l];
        const Tensor<T> k = matmul(x, layer.self.w_k), v = matmul(x, layer.self.w_v);
        c.self_k = c.self_k.defined() ? concat<T>({c.self_k, k}, 0) : k;
        c.self_v = c.self_v.defined() ? concat<T>({c.self_v, v}, 0) : v;
        x = layer.norm1(x + layer.self.attend(matmul(x, layer.self.w_q), c.self_k, c.self_v, false, eval));
        if (c.literal.empty()) {
          x = layer.norm2(x + layer.cross.attend(matmul(x, layer.cross.w_q), c.cross_k, c.cross_v, false, eval));
        } else {
          x = layer.norm2(x + layer.cross.literal_attend(c.literal, matmul(x, layer.cross.w_v)));
        }
        x = layer.norm3(x + layer.ffn(x));
      }
      ++this->pos_;
      return Base::row_values(m_.project_out(x));
    }

   private:
    struct Cache {
      Tensor<T> self_k, self_v, cross_k, cross_v;
      std::vector<Tensor<T>> literal;
    };
    const VideoMusicTransformer& m_;
    std::vector<Cache> caches_;
  };

  std::vector<EncoderLayer> enc_;
  std::vector<DecoderLayer> dec_;
  nn::Embedding<T> embed_;
};

// ---------------------------------------------------------------------------

/// Stacked-GRU encoder-decoder with attention. Decoder layer i reuses the
/// GRU cell of encoder layer i; each decode step attends from the previous
/// top-layer state over the encoder outputs, and the context joins the
/// token embedding through a linear map to H.
template <Real T>
class Seq2Seq final : public Model<T> {
  using Base = Model<T>;

 public:
  Seq2Seq(const ModelConfig& cfg, Rng& rng) : Base(cfg, rng) {
    const auto& c = this->cfg_;
    auto& s = this->store_;
    for (std::size_t l = 0; l < c.enc_layers; ++l) {
      grus_.push_back(nn::GruCell<T>::create(s, "gru" + std::to_string(l), c.hidden, c.hidden, rng));
    }
    attn_ = nn::MultiHeadAttention<T>::create(s, "attn", c.hidden, c.heads, rng);
    embed_ = nn::Embedding<T>::create(s, "embed", c.hidden, codec::kVocabSize, rng);
    in_w_ = s.add("dec_in.w", {2 * c.hidden, c.hidden}, nn::Init::XavierUniform, rng);
    in_b_ = s.add("dec_in.b", {c.hidden}, nn::Init::Zeros, rng);
    this->make_output(rng);
  }

  struct Encoded {
    Tensor<T> states;               // top-layer outputs [frames, H]
    std::vector<Tensor<T>> finals;  // last state of each layer, [1, H]
  };

  Encoded encode(const Tensor<T>& frame_vecs, const nn::ForwardContext& ctx) const {
    Encoded e;
    Tensor<T> x = frame_vecs;
    const std::size_t frames = frame_vecs.dim(0);
    for (const auto& gru : grus_) {
      Tensor<T> h = Tensor<T>::zeros({1, this->cfg_.hidden});
      std::vector<Tensor<T>> outs;
      outs.reserve(frames);
      for (std::size_t t = 0; t < frames; ++t) {
        h = gru(slice(x, 0, t, t + 1), h);
        outs.push_back(h);
      }
      e.finals.push_back(h);
      x = ctx.drop(concat(outs, 0));
    }
    e.states = x;
    return e;
  }

  Tensor<T> forward(const Tensor<T>& frame_vecs, std::span<const TokenId> target_in,
                    const nn::ForwardContext& ctx = {}) const override {
    this->check_inputs(frame_vecs, target_in);
    Encoded e = encode(frame_vecs, ctx);
    Attention att = prepare_attention(e.states, ctx);
    std::vector<Tensor<T>> state = e.finals;
    std::vector<Tensor<T>> tops;
    tops.reserve(target_in.size());
    for (std::size_t t = 0; t < target_in.size(); ++t) {
      tops.push_back(decode_step(target_in[t], att, state, ctx));
    }
    return this->project_out(concat(tops, 0));
  }

  std::unique_ptr<DecoderSession<T>> start_session(const Tensor<T>& frame_vecs) const override {
    return std::make_unique<Session>(*this, frame_vecs);
  }

  const std::vector<nn::GruCell<T>>& gru_layers() const { return grus_; }

 private:
  struct Attention {
    Tensor<T> k, v;                  // standard mode
    std::vector<Tensor<T>> literal;  // paper_literal mode
  };

  Attention prepare_attention(const Tensor<T>& enc, const nn::ForwardContext& ctx) const {
    Attention a;
    if (this->cfg_.cross_attention_mode == nn::CrossAttentionMode::Standard) {
      a.k = matmul(enc, attn_.w_k);
      a.v = matmul(enc, attn_.w_v);
    } else {
      a.literal = attn_.literal_weights(enc, ctx);
    }
    return a;
  }

  // Advances every layer by one token; returns the (dropped-out) top state.
  Tensor<T> decode_step(TokenId token, const Attention& att, std::vector<Tensor<T>>& state, const nn::ForwardContext& ctx) const {
    const TokenId ids[1] = {token};
    const Tensor<T>& query = state.back();
    const Tensor<T> context = att.literal.empty() ? attn_.attend(matmul(query, attn_.w_q), att.k, att.v, false, ctx)
                                                  : attn_.literal_attend(att.literal, matmul(query, attn_.w_v));
    Tensor<T> x = matmul(concat<T>({embed_(ids), context}, 1), in_w_) + in_b_;
    for (std::size_t l = 0; l < grus_.size(); ++l) {
      state[l] = grus_[l](x, state[l]);
      x = ctx.drop(state[l]);
    }
    return x;
  }

  class Session final : public DecoderSession<T> {
   public:
    Session(const Seq2Seq& m, const Tensor<T>& frame_vecs) : m_(m) {
      NoGradGuard no_grad;
      m_.check_inputs(frame_vecs, std::vector<TokenId>{codec::kStartId});
      Encoded e = m_.encode(frame_vecs, {});
      att_ = m_.prepare_attention(e.states, {});
      state_ = std::move(e.finals);
    }

    std::vector<T> step(TokenId token) override {
      m_.check_position(this->pos_);
      NoGradGuard no_grad;
      const Tensor<T> top = m_.decode_step(token, att_, state_, {});
      ++this->pos_;
      return Base::row_values(m_.project_out(top));
    }

   private:
    const Seq2Seq& m_;
    Attention att_;
    std::vector<Tensor<T>> state_;
  };

  std::vector<nn::GruCell<T>> grus_;
  nn::MultiHeadAttention<T> attn_;
  nn::Embedding<T> embed_;
  Tensor<T> in_w_, in_b_;
};

/// Builds the architecture named by cfg.kind with weights drawn from `seed`.
template <Real T>
std::unique_ptr<Model<T>> make_model(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  if (cfg.kind == ModelKind::Seq2Seq) return std::make_unique<Seq2Seq<T>>(cfg, rng);
  return std::make_unique<VideoMusicTransformer<T>>(cfg, rng);
}

/// Row-wise softmax of logits.
template <Real T>
Tensor<T> probabilities(const Tensor<T>& logits) {
  return softmax(logits);
}

}  // namespace vmt::models
