#pragma once

// Finite-difference checks for the nn building blocks and for both reduced
// models end to end (conv encoder through NLL), in float64.

#include <string>
#include <vector>

#include "vmt/models/model.hpp"
#include "vmt/tensor/op_checks.hpp"
#include "vmt/train/loss.hpp"

namespace vmt::models {

namespace detail {

inline std::vector<codec::TokenId> random_tokens(std::size_t n, Rng& rng) {
  std::vector<codec::TokenId> ids(n);
  for (auto& id : ids) id = static_cast<codec::TokenId>(rng.below(codec::kVocabSize));
  return ids;
}

}  // namespace detail

/// GRU cell, attention (self, causal, both cross modes), FFN, embedding and
/// the conv frame encoder on small shapes; every parameter entry checked.
inline std::vector<GradCheckResult> layer_gradient_checks(std::uint64_t seed, const GradCheckOptions& opt = {}) {
  using In = std::vector<Tensor<double>>;
  using vmt::detail::random_tensor;
  using vmt::detail::weighted;
  Rng rng(seed);
  std::vector<GradCheckResult> out;
  auto params_of = [](const nn::ParamStore<double>& s) {
    In v;
    for (const auto& e : s.entries()) v.push_back(e.second);
    return v;
  };
  // Inputs first, then every parameter of the store.
  auto check = [&](const std::string& name, In inputs, const nn::ParamStore<double>& store,
                   std::function<Tensor<double>(const In&)> f) {
    const std::size_t n_inputs = inputs.size();
    In all = std::move(inputs);
    for (auto& p : params_of(store)) all.push_back(p);
    auto op = [f, n_inputs](const In& x) { return f(In(x.begin(), x.begin() + static_cast<long>(n_inputs))); };
    out.push_back(gradcheck(name, all, weighted(op, seed), opt));
  };

  {
    nn::ParamStore<double> s;
    auto cell = nn::GruCell<double>::create(s, "gru", 3, 4, rng);
    for (const auto& e : s.entries()) {
      Tensor<double> t = e.second;
      for (auto& v : t.mutable_data()) v = rng.uniform(-0.5, 0.5);
    }
    check("gru_cell", {random_tensor({2, 3}, rng), random_tensor({2, 4}, rng)}, s, [cell](const In& x) { return cell(x[0], x[1]); });
  }
  for (auto mode : {nn::CrossAttentionMode::Standard, nn::CrossAttentionMode::PaperLiteral}) {
    nn::ParamStore<double> s;
    auto mha = nn::MultiHeadAttention<double>::create(s, "mha", 4, 2, rng);
    check(std::string("cross_attention_") + to_string(mode), {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)}, s,
          [mha, mode](const In& x) { return mha.cross_attention(x[0], x[1], mode, {}); });
  }
  {
    nn::ParamStore<double> s;
    auto mha = nn::MultiHeadAttention<double>::create(s, "mha", 4, 2, rng);
    check("causal_self_attention", {random_tensor({4, 4}, rng)}, s, [mha](const In& x) { return mha.self_attention(x[0], true, {}); });
  }
  {
    nn::ParamStore<double> s;
    auto ffn = nn::FeedForward<double>::create(s, "ffn", 4, 6, rng);
    Tensor<double> b1 = ffn.b1;
    for (auto& v : b1.mutable_data()) v = rng.uniform(-0.3, 0.3);
    check("ffn", {random_tensor({3, 4}, rng)}, s, [ffn](const In& x) { return ffn(x[0]); });
  }
  {
    // Three-token vocabulary; id 1 never appears, so its column gets no gradient.
    nn::ParamStore<double> s;
    auto emb = nn::Embedding<double>::create(s, "emb", 4, 3, rng);
    check("embedding", {}, s, [emb](const In&) {
      const codec::TokenId ids[] = {0, 2, 2, 0};
      return emb(ids);
    });
  }
  {
    nn::ParamStore<double> s;
    nn::ConvFrameEncoder<double> enc(s, "conv", {3, 4, 5}, rng);
    check("conv_frame_encoder", {random_tensor({2, 3, 16, 16}, rng)}, s, [&enc](const In& x) { return enc(x[0]); });
  }
  return out;
}

/// Model-level losses sum over ~10^5 terms, so central differences carry
/// roundoff near 1e-9 and the conv stack puts LeakyReLU kinks close to many
/// perturbations: hence the smaller base step, the retries, the one-sided
/// fallback and the floor.
inline GradCheckOptions model_grad_options() {
  GradCheckOptions g;
  g.step = 1e-6;
  g.retry_steps = {1e-7, 1e-5};
  g.floor = 1e-4;
  g.one_sided = true;
  return g;
}

struct ModelCheckOptions {
  GradCheckOptions grad{};
  GradCheckOptions model_grad = model_grad_options();
  std::size_t entries_per_tensor = 2;  // sampled entries per parameter tensor
  std::size_t frames = 8;  // any count works; fewer frames put fewer kinks near each perturbation
  std::size_t target_len = 8;
};

/// End-to-end NLL gradient of a reduced model with dropout off, checked on
/// sampled entries of every parameter tensor.
inline GradCheckResult model_gradient_check(const ModelConfig& cfg, std::uint64_t seed, const ModelCheckOptions& o = {}) {
  ModelConfig c = cfg;
  c.dropout = 0.0;
  auto model = make_model<double>(c, seed);
  Rng rng(seed ^ 0x5151ULL);
  const Tensor<double> clip = vmt::detail::random_tensor({o.frames, 3, 128, 128}, rng);
  std::vector<codec::TokenId> input = detail::random_tokens(o.target_len, rng);
  input.front() = codec::kStartId;
  std::vector<codec::TokenId> target(input.begin() + 1, input.end());
  target.push_back(codec::kEndId);

  std::vector<Tensor<double>> inputs;
  for (const auto& e : model->params().entries()) inputs.push_back(e.second);
  GradCheckOptions g = o.model_grad;
  g.max_entries = o.entries_per_tensor;
  g.seed = seed;
  const Model<double>& m = *model;
  return gradcheck(to_string(c.kind) + "_" + to_string(c.cross_attention_mode) + "_H" + std::to_string(c.hidden), inputs,
                   [&](const std::vector<Tensor<double>>&) { return train::nll_loss(m.logits(clip, input), target); }, g);
}

/// Everything: tensor ops, nn layers, and the reduced VMT (both cross
/// attention modes) and Seq2Seq.
inline std::vector<GradCheckResult> full_gradient_suite(std::uint64_t seed, const ModelCheckOptions& o = {}) {
  auto results = op_gradient_checks(seed, o.grad);
  for (auto& r : layer_gradient_checks(seed, o.grad)) results.push_back(std::move(r));
  ModelConfig vmt = ModelConfig::reduced(ModelKind::Vmt);
  results.push_back(model_gradient_check(vmt, seed, o));
  vmt.cross_attention_mode = nn::CrossAttentionMode::PaperLiteral;
  results.push_back(model_gradient_check(vmt, seed, o));
  results.push_back(model_gradient_check(ModelConfig::reduced(ModelKind::Seq2Seq), seed, o));
  return results;
}

}  // namespace vmt::models
