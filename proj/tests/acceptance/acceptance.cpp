// Acceptance run: one PASS/FAIL line per criterion, timed against its budget.
// Exit status is 0 only when every primary criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "../support/scores.hpp"
#include "vmt/codec/performance.hpp"
#include "vmt/data/synth.hpp"
#include "vmt/infer/generate.hpp"
#include "vmt/models/grad_checks.hpp"
#include "vmt/train/loop.hpp"

using namespace vmt;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- codec

Outcome vocabulary() {
  std::map<codec::EventKind, int> kinds;
  std::size_t bijective = 0;
  for (std::size_t id = 0; id < codec::vocab_size(); ++id) {
    const codec::Token t = codec::id_to_token(id);
    ++kinds[t.kind];
    if (codec::token_to_id(t) == id) ++bijective;
  }
  bool out_of_range = false;
  try {
    codec::id_to_token(codec::vocab_size());
  } catch (const DataError&) {
    out_of_range = true;
  }
  using K = codec::EventKind;
  const bool ok = codec::vocab_size() == 310 && kinds[K::NoteOn] == 88 && kinds[K::NoteOff] == 88 && kinds[K::TimeShift] == 32 &&
                  kinds[K::Velocity] == 100 && kinds[K::Start] + kinds[K::End] == 2 && bijective == 310 && out_of_range;
  return {ok, "size " + std::to_string(codec::vocab_size()) + " = " + std::to_string(kinds[K::NoteOn]) + "+" +
                  std::to_string(kinds[K::NoteOff]) + "+" + std::to_string(kinds[K::TimeShift]) + "+" +
                  std::to_string(kinds[K::Velocity]) + "+" + std::to_string(kinds[K::Start] + kinds[K::End]) + ", " +
                  std::to_string(bijective) + " ids round-trip"};
}

Outcome codec_round_trip() {
  std::size_t bad = 0, warnings = 0, notes = 0;
  double worst_time = 0;
  int worst_vel = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = fixtures::random_score(seed);
    const auto r = codec::decode(codec::encode(s));
    warnings += r.warnings.total();
    if (r.score.notes.size() != s.notes.size()) {
      ++bad;
      continue;
    }
    const auto a = fixtures::by_pitch(s.notes), b = fixtures::by_pitch(r.score.notes);
    for (std::size_t i = 0; i < a.size(); ++i, ++notes) {
      if (a[i].pitch != b[i].pitch) ++bad;
      worst_time = std::max({worst_time, std::abs(a[i].onset_sec - b[i].onset_sec), std::abs(a[i].offset_sec - b[i].offset_sec)});
      worst_vel = std::max(worst_vel, std::abs(codec::velocity_to_bin(a[i].velocity) - codec::velocity_to_bin(b[i].velocity)));
    }
  }
  const bool ok = bad == 0 && warnings == 0 && worst_time <= 0.015625 + 1e-12 && worst_vel <= 1;
  return {ok, "100 scores, " + std::to_string(notes) + " notes, max time error " + fmt("%.3f ms", worst_time * 1e3) +
                  ", max velocity bin diff " + std::to_string(worst_vel) + ", " + std::to_string(warnings) + " warnings"};
}

Outcome smf_round_trip() {
  std::size_t bad = 0, notes = 0;
  double worst = 0, worst_ratio = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    midi::MidiScore s = fixtures::random_score(seed);
    Rng rng(seed + 1000);
    s.tempo_map = {midi::TempoChange{0, 300000 + static_cast<std::uint32_t>(rng.below(700000))}};
    const midi::MidiScore back = midi::parse_smf(midi::write_smf(s));
    const double half_tick = s.tempo_map[0].us_per_quarter / 1e6 / s.ticks_per_quarter / 2;
    if (back.notes.size() != s.notes.size() || !(back.tempo_map == s.tempo_map)) {
      ++bad;
      continue;
    }
    const auto a = fixtures::by_pitch(s.notes), b = fixtures::by_pitch(back.notes);
    for (std::size_t i = 0; i < a.size(); ++i, ++notes) {
      if (a[i].pitch != b[i].pitch || a[i].velocity != b[i].velocity) ++bad;
      const double err = std::max(std::abs(a[i].onset_sec - b[i].onset_sec), std::abs(a[i].offset_sec - b[i].offset_sec));
      worst = std::max(worst, err);
      worst_ratio = std::max(worst_ratio, err / half_tick);
    }
  }
  return {bad == 0 && worst_ratio <= 1.0 + 1e-9,
          "100 scores, " + std::to_string(notes) + " notes, pitch/velocity/tempo exact, max time error " + fmt("%.3f ms", worst * 1e3) +
              " (" + fmt("%.2f", worst_ratio) + " of half a tick)"};
}

// ---------------------------------------------------------------- nn / models

Outcome gradient_suite() {
  std::size_t entries = 0, failed = 0;
  double worst = 0;
  std::string names;
  for (const auto& r : models::full_gradient_suite(1)) {
    entries += r.checked;
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) {
      ++failed;
      names += " " + r.name + "(" + r.worst + ")";
    }
  }
  return {failed == 0, std::to_string(entries) + " entries over ops, layers, VMT (both cross modes) and Seq2Seq, max rel err " +
                           fmt("%.2e", worst) + (failed ? ", failed:" + names : "")};
}

Outcome shape_pipeline() {
  const auto plan = nn::conv_channel_plan();
  models::ModelConfig cfg = models::ModelConfig::full(models::ModelKind::Vmt);
  const auto pairs = data::synth_pairs(1, 77);
  train::TrainConfig tc;
  tc.batch_size = 1;
  tc.total_steps = 1;
  auto model = models::make_model<float>(cfg, 5);
  Shape frames;
  {
    NoGradGuard g;
    frames = model->encode_frames(data::normalize<float>(pairs[0].clip)).shape();
  }
  train::Trainer<float> trainer(std::move(model), tc, pairs);
  const auto rec = trainer.step();
  const bool ok = plan == std::vector<std::size_t>{64, 128, 512} && frames == Shape{40, 512} && cfg.hidden == 512 &&
                  cfg.enc_layers == 6 && cfg.dec_layers == 6 && std::isfinite(rec.train_loss) && trainer.steps_done() == 1;
  return {ok, "plan (" + std::to_string(plan[0]) + "," + std::to_string(plan[1]) + "," + std::to_string(plan[2]) + "), frames " +
                  to_string(frames) + ", H=512 6+6 VMT step 1 loss " + fmt("%.4f", rec.train_loss) + " on " +
                  std::to_string(pairs[0].tokens.size()) + " tokens"};
}

Outcome causality() {
  std::string detail;
  bool ok = true;
  for (auto kind : {models::ModelKind::Vmt, models::ModelKind::Seq2Seq}) {
    for (auto mode : {nn::CrossAttentionMode::Standard, nn::CrossAttentionMode::PaperLiteral}) {
      auto cfg = models::ModelConfig::reduced(kind);
      cfg.cross_attention_mode = mode;
      auto m = models::make_model<double>(cfg, 100);
      Rng rng(Rng::derive(200, static_cast<std::uint64_t>(kind) * 2 + static_cast<std::uint64_t>(mode)));
      double worst = 0;
      NoGradGuard g;
      for (int c = 0; c < 20; ++c) {
        const auto frames = vmt::detail::random_tensor({40, cfg.hidden}, rng);
        const std::size_t len = 2 + rng.below(63);
        auto a = models::detail::random_tokens(len, rng);
        a.front() = codec::kStartId;
        auto b = a;
        const std::size_t t = rng.below(len - 1);
        for (std::size_t k = t + 1; k < len; ++k) b[k] = static_cast<codec::TokenId>(rng.below(codec::kVocabSize));
        const auto la = m->forward(frames, a), lb = m->forward(frames, b);
        for (std::size_t i = 0; i < (t + 1) * codec::kVocabSize; ++i) worst = std::max(worst, std::abs(la.data()[i] - lb.data()[i]));
      }
      ok = ok && worst <= 1e-6;
      detail += (detail.empty() ? "" : ", ") + models::to_string(kind) + "/" + models::to_string(mode) + " max diff " + fmt("%.1e", worst);
    }
  }
  return {ok, "20 cases each: " + detail};
}

// ---------------------------------------------------------------- train

Outcome schedule() {
  const double peak = 1e-3, w = 8000;
  const bool ok = train::lr_schedule(8000) == 1e-3 && train::lr_schedule(4000) == 5e-4 && train::lr_schedule(32000) == 5e-4 &&
                  peak * 8000 / w == peak * std::sqrt(w / 8000) && std::abs(train::lr_schedule(8001) - 1e-3) < 1e-6 &&
                  std::abs(train::lr_schedule(7999) - 1e-3) < 1e-6;
  return {ok, "lr(4000)=" + fmt("%g", train::lr_schedule(4000)) + " lr(8000)=" + fmt("%g", train::lr_schedule(8000)) +
                  " lr(8001)=" + fmt("%.9g", train::lr_schedule(8001)) + " lr(32000)=" + fmt("%g", train::lr_schedule(32000))};
}

struct OverfitRun {
  std::string metrics;      // one JSON line per step
  std::uint64_t steps = 0;  // steps taken when both conditions first held
  double nll = 0;
  bool reached = false;     // NLL below target within the step budget
  bool reproduced = false;  // greedy output equals every training target
  bool trend = true;        // 50-step window means fall after warmup
};

constexpr std::uint64_t kOverfitSeed = 1;

// The loop itself has no stopping rule; the harness stops it once the
// evaluation NLL is below target and greedy decoding reproduces all four
// targets, or at the step budget.
OverfitRun overfit(models::ModelKind kind, double target, std::uint64_t budget) {
  const auto pairs = data::synth_pairs(4, kOverfitSeed);
  auto mcfg = models::ModelConfig::reduced(kind);
  mcfg.dropout = 0.0;
  train::TrainConfig tc;
  tc.batch_size = 4;
  tc.peak_lr = 3e-3;
  tc.warmup_steps = 50;
  tc.total_steps = budget;
  tc.eval_every = budget + 1;
  tc.seed = kOverfitSeed;
  train::Trainer<float> trainer(models::make_model<float>(mcfg, kOverfitSeed), tc, pairs);

  OverfitRun run;
  std::vector<double> losses;
  std::uint64_t next_check = 0;
  while (trainer.steps_done() < budget) {
    const auto rec = trainer.step();
    run.metrics += rec.to_json().dump() + "\n";
    losses.push_back(rec.train_loss);
    if (rec.train_loss >= target || rec.step < next_check) continue;
    next_check = rec.step + 10;
    run.nll = train::evaluate_nll(trainer.model(), pairs);
    if (run.nll >= target) continue;
    run.reached = true;
    run.reproduced = true;
    for (const auto& p : pairs) {
      infer::GenConfig g;
      g.max_len = p.tokens.size() + 8;
      if (infer::generate(trainer.model(), p.clip, g) != p.tokens) run.reproduced = false;
    }
    if (run.reproduced) break;
  }
  run.steps = trainer.steps_done();
  if (!run.reached) run.nll = train::evaluate_nll(trainer.model(), pairs);
  double prev = INFINITY;
  for (std::size_t w0 = tc.warmup_steps; w0 + 50 <= losses.size(); w0 += 50) {
    double mean = 0;
    for (std::size_t i = w0; i < w0 + 50; ++i) mean += losses[i] / 50;
    if (!(mean < prev)) run.trend = false;
    prev = mean;
  }
  return run;
}

std::string describe(const OverfitRun& r, double target, std::uint64_t budget) {
  return "NLL " + fmt("%.4f", r.nll) + (r.reached ? " < " : " >= ") + fmt("%g", target) + " at step " + std::to_string(r.steps) + "/" +
         std::to_string(budget) + ", greedy " + (r.reproduced ? "reproduces all 4 targets" : "does not reproduce every target") +
         ", windowed loss " + (r.trend ? "falling" : "not monotone");
}

// ---------------------------------------------------------------- infer

Outcome generation_contract() {
  const auto clips = data::synth_pairs(50, 31);
  auto vmt = models::make_model<float>(models::ModelConfig::reduced(models::ModelKind::Vmt), 40);
  auto s2s = models::make_model<float>(models::ModelConfig::reduced(models::ModelKind::Seq2Seq), 41);
  std::size_t ok = 0, longest = 0, forced = 0;
  double longest_sec = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    infer::GenConfig g;
    g.mode = i % 4 < 2 ? infer::DecodeMode::Greedy : infer::DecodeMode::Sample;
    g.seed = i;
    const auto& m = i % 2 == 0 ? *vmt : *s2s;
    try {
      const auto r = infer::generate_midi(m, clips[i].clip, g);
      longest = std::max(longest, r.tokens.size());
      longest_sec = std::max(longest_sec, r.duration_sec);
      if (!r.ended_naturally) ++forced;
      if (r.tokens.size() <= 1025 && r.tokens.front() == codec::kStartId && r.tokens.back() == codec::kEndId && r.duration_sec <= 10.0) {
        ++ok;
      }
    } catch (const std::exception&) {
    }
  }
  return {ok == clips.size(), std::to_string(ok) + "/50 within contract (untrained VMT and Seq2Seq, greedy and sampled), longest " +
                                  std::to_string(longest) + " tokens, " + std::to_string(forced) + " END forced at the cap, max duration " +
                                  fmt("%.2f s", longest_sec)};
}

// ---------------------------------------------------------------- comparison

struct ComparisonRow {
  std::string model;
  double test_nll = 0;
  std::size_t warnings = 0, natural_end = 0, consistent = 0, clips = 0;
  codec::DecodeWarnings by_kind;
  double mean_tokens = 0;
};

ComparisonRow compare_one(models::ModelKind kind, const std::vector<data::ClipPair>& train, const std::vector<data::ClipPair>& test,
                          std::uint64_t steps) {
  train::TrainConfig tc;
  tc.peak_lr = 3e-3;
  tc.warmup_steps = 50;
  tc.total_steps = steps;
  tc.eval_every = steps + 1;
  tc.seed = 3;
  train::Trainer<float> trainer(models::make_model<float>(models::ModelConfig::reduced(kind), 3), tc, train);
  while (trainer.steps_done() < steps) trainer.step();
  ComparisonRow row;
  row.model = to_string(kind);
  row.test_nll = train::evaluate_nll(trainer.model(), test);
  row.clips = test.size();
  for (const auto& p : test) {
    const auto g = infer::generate_midi(trainer.model(), p.clip, infer::GenConfig{});
    const auto ref = codec::decode(p.tokens).score;
    row.warnings += g.warnings.total();
    row.by_kind.unmatched_note_on += g.warnings.unmatched_note_on;
    row.by_kind.unmatched_note_off += g.warnings.unmatched_note_off;
    row.by_kind.duplicate_note_on += g.warnings.duplicate_note_on;
    row.by_kind.truncated += g.warnings.truncated;
    row.by_kind.missing_end += g.warnings.missing_end;
    if (g.ended_naturally) ++row.natural_end;
    if (g.ended_naturally && std::abs(g.duration_sec - ref.duration_sec()) <= 0.5) ++row.consistent;
    row.mean_tokens += static_cast<double>(g.tokens.size()) / static_cast<double>(test.size());
  }
  return row;
}

Outcome comparative_report(std::string& table) {
  const auto train = data::synth_pairs(256, 2);
  const auto test = data::synth_pairs(64, 2, 10000);
  const std::uint64_t steps = 400;
  std::vector<ComparisonRow> rows{compare_one(models::ModelKind::Vmt, train, test, steps),
                                  compare_one(models::ModelKind::Seq2Seq, train, test, steps)};
  std::ostringstream t;
  t << "    reduced models, " << steps << " steps on 256 synthetic pairs, greedy decoding on a 64-pair test split\n";
  t << "    model    test_nll  warnings  unmatched_on  unmatched_off  duplicate  truncated  END_emitted  length_consistent  mean_tokens\n";
  for (const auto& r : rows) {
    char line[256];
    std::snprintf(line, sizeof line, "    %-8s %8.4f  %8zu  %12zu  %13zu  %9zu  %9zu  %8zu/%zu  %14zu/%zu  %11.1f\n", r.model.c_str(), r.test_nll,
                  r.warnings, r.by_kind.unmatched_note_on, r.by_kind.unmatched_note_off, r.by_kind.duplicate_note_on, r.by_kind.truncated,
                  r.natural_end, r.clips, r.consistent, r.clips, r.mean_tokens);
    t << line;
  }
  t << "    length_consistent: END emitted and decoded duration within 0.5 s of the reference";
  table = t.str();
  const bool vmt_fewer = rows[0].warnings <= rows[1].warnings;
  return {true, std::string("table emitted (not asserted); VMT warnings ") + (vmt_fewer ? "<=" : ">") + " Seq2Seq warnings"};
}

// ---------------------------------------------------------------- driver

struct Runner {
  std::size_t failures = 0;

  void run(const std::string& name, double budget_sec, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = budget_sec <= 0 || sec <= budget_sec;
    report(name, o.pass && in_time, o.detail + (in_time ? "" : "; over the time budget"), sec, budget_sec);
  }

  void report(const std::string& name, bool pass, const std::string& detail, double sec, double budget_sec) {
    if (!pass) ++failures;
    std::printf("%s %s: %s [%.1f s%s]\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str(), sec,
                budget_sec > 0 ? (", budget " + fmt("%g", budget_sec) + " s").c_str() : "");
    std::fflush(stdout);
  }
};

}  // namespace

int main() {
  Runner r;
  r.run("vocabulary", 1, vocabulary);
  r.run("codec_round_trip", 10, codec_round_trip);
  r.run("smf_round_trip", 10, smf_round_trip);
  r.run("gradient_suite", 300, gradient_suite);
  r.run("shape_pipeline", 120, shape_pipeline);
  r.run("causality", 60, causality);
  r.run("schedule", 1, schedule);

  OverfitRun vmt_run, s2s_run;
  r.run("overfit", 600, [&] {
    vmt_run = overfit(models::ModelKind::Vmt, 0.1, 500);
    s2s_run = overfit(models::ModelKind::Seq2Seq, 0.3, 1500);
    const bool ok = vmt_run.reached && vmt_run.reproduced && vmt_run.trend && s2s_run.reached && s2s_run.reproduced && s2s_run.trend;
    return Outcome{ok, "VMT " + describe(vmt_run, 0.1, 500) + "; Seq2Seq " + describe(s2s_run, 0.3, 1500)};
  });

  r.run("generation_contract", 120, generation_contract);

  r.run("determinism", 0, [&] {
    const auto v2 = overfit(models::ModelKind::Vmt, 0.1, 500);
    const auto s2 = overfit(models::ModelKind::Seq2Seq, 0.3, 1500);
    const bool ok = !vmt_run.metrics.empty() && v2.metrics == vmt_run.metrics && s2.metrics == s2s_run.metrics;
    return Outcome{ok, "second overfit runs: VMT log " + std::string(v2.metrics == vmt_run.metrics ? "identical" : "differs") + " (" +
                           std::to_string(v2.steps) + " lines), Seq2Seq log " +
                           (s2.metrics == s2s_run.metrics ? "identical" : "differs") + " (" + std::to_string(s2.steps) + " lines)"};
  });

  std::string table;
  r.run("comparative_report", 0, [&] { return comparative_report(table); });
  std::printf("%s\n", table.c_str());

  std::printf("SKIP dataprep (secondary, Python; not part of this build)\n");
  std::printf("%s: %zu primary criteria failed\n", r.failures ? "FAIL" : "PASS", r.failures);
  return r.failures == 0 ? 0 : 1;
}
