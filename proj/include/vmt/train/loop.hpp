#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmt/data/dataset.hpp"
#include "vmt/models/checkpoint.hpp"
#include "vmt/train/adam.hpp"
#include "vmt/train/loss.hpp"
#include "vmt/train/schedule.hpp"

namespace vmt::train {

struct TrainConfig {
  std::size_t batch_size = 4;
  double peak_lr = 1e-3;
  std::uint64_t warmup_steps = 8000;
  AdamConfig adam;
  std::uint64_t total_steps = 50000;
  std::uint64_t eval_every = 1000;
  std::uint64_t seed = 0;
  std::string manifest;        // used by train_loop
  std::string checkpoint_dir;  // checkpoint.ckpt and metrics.jsonl go here

  void validate() const {
    auto fail = [](const std::string& m) { throw DataError("train config: " + m); };
    if (batch_size == 0) fail("batch_size must be positive");
    if (!(peak_lr > 0.0)) fail("peak_lr must be positive");
    if (warmup_steps == 0) fail("warmup_steps must be at least 1");
    if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0 && adam.beta2 > 0.0 && adam.beta2 < 1.0)) fail("adam betas must lie in (0, 1)");
    if (!(adam.eps > 0.0)) fail("adam eps must be positive");
    if (total_steps == 0) fail("total_steps must be positive");
    if (eval_every == 0) fail("eval_every must be positive");
  }

  std::filesystem::path checkpoint_path() const { return std::filesystem::path(checkpoint_dir) / "checkpoint.ckpt"; }
  std::filesystem::path metrics_path() const { return std::filesystem::path(checkpoint_dir) / "metrics.jsonl"; }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"peak_lr", c.peak_lr},   {"warmup_steps", c.warmup_steps},
          {"beta1", c.adam.beta1},      {"beta2", c.adam.beta2},  {"eps", c.adam.eps},
          {"total_steps", c.total_steps}, {"eval_every", c.eval_every}, {"seed", c.seed},
          {"manifest", c.manifest},     {"checkpoint_dir", c.checkpoint_dir}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "peak_lr") c.peak_lr = value.get<double>();
      else if (key == "warmup_steps") c.warmup_steps = value.get<std::uint64_t>();
      else if (key == "beta1") c.adam.beta1 = value.get<double>();
      else if (key == "beta2") c.adam.beta2 = value.get<double>();
      else if (key == "eps") c.adam.eps = value.get<double>();
      else if (key == "total_steps") c.total_steps = value.get<std::uint64_t>();
      else if (key == "eval_every") c.eval_every = value.get<std::uint64_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "manifest") c.manifest = value.get<std::string>();
      else if (key == "checkpoint_dir") c.checkpoint_dir = value.get<std::string>();
      else throw DataError("train config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

struct StepRecord {
  std::uint64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;

  nlohmann::json to_json() const {
    nlohmann::json j{{"step", step}, {"lr", lr}, {"train_loss", train_loss}};
    if (val_loss) j["val_loss"] = *val_loss;
    return j;
  }
};

/// Teacher-forced (input, target) pair: [START, y...] against [y..., END].
struct ShiftedTokens {
  std::vector<codec::TokenId> input, target;
};

inline ShiftedTokens shift_tokens(const std::vector<codec::TokenId>& tokens) {
  if (tokens.size() < 2) throw DataError("a target sequence needs at least START and END");
  return {{tokens.begin(), tokens.end() - 1}, {tokens.begin() + 1, tokens.end()}};
}

/// Per-token NLL of one batch of pairs, all tokens weighted equally.
template <Real T>
Tensor<T> batch_loss(const models::Model<T>& model, const std::vector<const data::ClipPair*>& pairs, const nn::ForwardContext& ctx) {
  std::vector<Tensor<T>> logits;
  std::vector<codec::TokenId> targets;
  for (const auto* p : pairs) {
    const ShiftedTokens s = shift_tokens(p->tokens);
    logits.push_back(model.logits(data::normalize<T>(p->clip), s.input, ctx));
    targets.insert(targets.end(), s.target.begin(), s.target.end());
  }
  return nll_loss(logits.size() == 1 ? logits.front() : concat(logits, 0), targets);
}

/// Mean per-token NLL over a split in evaluation mode.
template <Real T>
double evaluate_nll(const models::Model<T>& model, const std::vector<data::ClipPair>& pairs) {
  if (pairs.empty()) throw DataError("cannot evaluate on an empty split");
  NoGradGuard no_grad;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& p : pairs) {
    const std::size_t n = p.tokens.size() - 1;
    total += static_cast<double>(batch_loss(model, {&p}, {}).item()) * static_cast<double>(n);
    count += n;
  }
  return total / static_cast<double>(count);
}

/// Owns the model and optimizer for one run. Batch composition and dropout
/// draws are pure functions of (seed, step), so a run resumed from a
/// checkpoint continues exactly as an uninterrupted one would.
template <Real T>
class Trainer {
 public:
  Trainer(std::unique_ptr<models::Model<T>> model, const TrainConfig& cfg, const std::vector<data::ClipPair>& train,
          const std::vector<data::ClipPair>* validation = nullptr, codec::CodecConfig codec = {})
      : model_(std::move(model)),
        cfg_(cfg),
        train_(&train),
        val_(validation),
        batches_(train, cfg.batch_size, cfg.seed),
        adam_(model_->params(), cfg.adam),
        codec_(codec) {
    cfg_.validate();
  }

  /// Continues from a checkpoint written by save(); the model comes from it.
  static Trainer resume(const std::filesystem::path& checkpoint, const TrainConfig& cfg, const std::vector<data::ClipPair>& train,
                        const std::vector<data::ClipPair>* validation = nullptr) {
    auto loaded = models::load_checkpoint<T>(checkpoint);
    if (!loaded.optimizer) throw CheckpointError(checkpoint.string() + ": no optimizer state to resume from");
    Trainer t(std::move(loaded.model), cfg, train, validation, loaded.meta.codec);
    t.adam_.load_state(*loaded.optimizer);
    return t;
  }

  std::uint64_t steps_done() const { return adam_.steps_taken(); }
  models::Model<T>& model() { return *model_; }
  const models::Model<T>& model() const { return *model_; }
  const TrainConfig& config() const { return cfg_; }

  /// One optimizer step on the next batch. The recorded loss is the batch
  /// loss before the update. Throws NumericError on a non-finite loss or
  /// gradient without changing any parameter.
  StepRecord step() {
    StepRecord rec;
    rec.step = steps_done() + 1;
    rec.lr = lr_schedule(rec.step, cfg_.peak_lr, cfg_.warmup_steps);
    const data::Batch b = batches_.batch(rec.step - 1);
    std::vector<const data::ClipPair*> pairs;
    for (std::size_t i : b.items) pairs.push_back(&(*train_)[i]);
    Rng rng = Rng::derive(cfg_.seed ^ 0xd1ce5eedULL, rec.step);
    const auto ctx = nn::ForwardContext::train(model_->config().dropout, rng);
    model_->params().zero_grad();
    Tensor<T> loss = batch_loss(*model_, pairs, ctx);
    rec.train_loss = static_cast<double>(loss.item());
    if (!std::isfinite(rec.train_loss)) throw NumericError("non-finite training loss at step " + std::to_string(rec.step));
    backward(loss);
    adam_.step(rec.lr);
    model_->params().zero_grad();
    if (rec.step % cfg_.eval_every == 0 && val_ && !val_->empty()) rec.val_loss = evaluate_nll(*model_, *val_);
    return rec;
  }

  void save(const std::filesystem::path& path) const {
    models::CheckpointMeta meta;
    meta.seed = cfg_.seed;
    meta.codec = codec_;
    meta.extra = {{"train", to_json(cfg_)}};
    models::save_checkpoint(path, *model_, meta, &adam_.state());
  }

 private:
  std::unique_ptr<models::Model<T>> model_;
  TrainConfig cfg_;
  const std::vector<data::ClipPair>* train_;
  const std::vector<data::ClipPair>* val_;
  data::BatchIterator batches_;
  Adam<T> adam_;
  codec::CodecConfig codec_;
};

struct TrainSummary {
  std::uint64_t steps = 0;
  double last_train_loss = 0.0;
  std::optional<double> last_val_loss;
};

/// Runs `trainer` up to cfg.total_steps, appending one JSON line per step
/// to `metrics` and writing the checkpoint at every eval point and at the
/// end. A NumericError propagates after the metrics written so far are
/// flushed; the checkpoint on disk is then the last good one.
template <Real T>
TrainSummary run_training(Trainer<T>& trainer, std::ostream& metrics, const std::filesystem::path& checkpoint) {
  TrainSummary summary;
  const auto& cfg = trainer.config();
  while (trainer.steps_done() < cfg.total_steps) {
    const StepRecord rec = trainer.step();
    metrics << rec.to_json().dump() << '\n';
    metrics.flush();
    summary.steps = rec.step;
    summary.last_train_loss = rec.train_loss;
    if (rec.val_loss) summary.last_val_loss = rec.val_loss;
    if (!checkpoint.empty() && (rec.step % cfg.eval_every == 0 || rec.step == cfg.total_steps)) trainer.save(checkpoint);
  }
  return summary;
}

/// Full run from a manifest: loads the train and validation splits, builds
/// the model from `model_cfg` (or resumes from the checkpoint in
/// cfg.checkpoint_dir when `resume` is set) and trains in float32.
inline TrainSummary train_loop(const models::ModelConfig& model_cfg, const TrainConfig& cfg, bool resume = false) {
  cfg.validate();
  if (cfg.manifest.empty()) throw DataError("train config: manifest is required");
  if (cfg.checkpoint_dir.empty()) throw DataError("train config: checkpoint_dir is required");
  const data::Manifest manifest = data::load_manifest(cfg.manifest);
  const auto train = data::load_split(manifest, "train");
  if (train.empty()) throw DataError(cfg.manifest + ": the train split is empty");
  const auto val = data::load_split(manifest, "validation");
  std::filesystem::create_directories(cfg.checkpoint_dir);
  std::optional<Trainer<float>> trainer;
  if (resume) {
    trainer.emplace(Trainer<float>::resume(cfg.checkpoint_path(), cfg, train, &val));
  } else {
    trainer.emplace(models::make_model<float>(model_cfg, cfg.seed), cfg, train, &val);
  }
  std::ofstream metrics(cfg.metrics_path(), resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw DataError("cannot write " + cfg.metrics_path().string());
  return run_training(*trainer, metrics, cfg.checkpoint_path());
}

}  // namespace vmt::train
