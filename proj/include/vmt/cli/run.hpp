#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vmt/data/synth.hpp"
#include "vmt/infer/generate.hpp"
#include "vmt/models/grad_checks.hpp"
#include "vmt/train/loop.hpp"
#include "vmt/viz/piano_roll.hpp"

namespace vmt::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

namespace detail {

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
  if (!out) throw DataError("short write to " + p.string());
}

inline std::string describe(const codec::DecodeWarnings& w) {
  std::ostringstream s;
  s << "warnings: " << w.total() << " (unmatched_note_on=" << w.unmatched_note_on << " unmatched_note_off=" << w.unmatched_note_off
    << " duplicate_note_on=" << w.duplicate_note_on << " zero_length=" << w.zero_length << " truncated=" << w.truncated
    << " misplaced_start=" << w.misplaced_start << " invalid_id=" << w.invalid_id << " missing_end=" << w.missing_end << ")";
  return s.str();
}

// Relative paths inside a config file are taken from the file's directory.
inline std::string resolve_from(const std::filesystem::path& base, const std::string& p) {
  if (p.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

}  // namespace detail

/// Parses and runs one subcommand. Returns the process exit code: 0 ok,
/// 1 usage, 2 data, 3 numeric.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Video-to-music transformer toolkit", "vmt"};
  app.require_subcommand(1, 1);

  std::string in_path, out_path;

  auto* encode = app.add_subcommand("codec-encode", "MIDI file to performance-event tokens (one per line)");
  encode->add_option("input", in_path, "input .mid")->required();
  encode->add_option("-o,--output", out_path, "output .tokens")->required();

  auto* decode = app.add_subcommand("codec-decode", "token file to MIDI; prints decode warnings");
  decode->add_option("input", in_path, "input .tokens")->required();
  decode->add_option("-o,--output", out_path, "output .mid")->required();

  std::size_t synth_n = 0;
  std::uint64_t synth_seed = 0;
  std::string synth_split;
  auto* synth = app.add_subcommand("dataset-synth", "write a synthetic paired dataset with manifest.json");
  synth->add_option("-n", synth_n, "number of pairs")->required()->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "generator seed")->required();
  synth->add_option("-o,--output", out_path, "output directory")->required();
  synth->add_option("--split", synth_split, "put every pair in this split")->check(CLI::IsMember({"train", "validation", "test"}));

  auto* validate = app.add_subcommand("dataset-validate", "check every clip and MIDI file a manifest references");
  validate->add_option("manifest", in_path, "manifest.json")->required();

  std::string config_path;
  bool resume = false;
  auto* train = app.add_subcommand("train", "train from a JSON config {\"model\": {...}, \"train\": {...}}");
  train->add_option("--config", config_path, "config file")->required();
  train->add_flag("--resume", resume, "continue from the checkpoint in checkpoint_dir");

  std::string ckpt_path, clip_path, mode = "greedy";
  double temperature = 1.0;
  std::uint64_t gen_seed = 0;
  std::size_t max_len = 1024;
  auto* gen = app.add_subcommand("generate", "generate MIDI for a clip; writes a JSON sidecar next to the output");
  gen->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  gen->add_option("--clip", clip_path, "VMTF clip")->required();
  gen->add_option("--mode", mode, "greedy or sample")->check(CLI::IsMember({"greedy", "sample"}));
  gen->add_option("--temp", temperature, "sampling temperature")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "sampling seed");
  gen->add_option("--max-len", max_len, "decoder token cap")->check(CLI::PositiveNumber);
  gen->add_option("-o,--output", out_path, "output .mid")->required();

  auto* viz = app.add_subcommand("viz", "render a MIDI file as an SVG piano roll");
  viz->add_option("input", in_path, "input .mid")->required();
  viz->add_option("-o,--output", out_path, "output .svg")->required();

  std::uint64_t check_seed = 1;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op, layer and both reduced models");
  grad->add_option("--seed", check_seed, "seed for operands and sampled entries");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (*encode) {
      midi::SmfWarnings sw;
      const auto score = midi::read_smf_file(in_path, &sw);
      const auto tokens = codec::encode(score);
      detail::write_text(out_path, codec::tokens_to_text(tokens));
      out << tokens.size() << " tokens, " << score.notes.size() << " notes, " << sw.total() << " SMF warnings\n";
    } else if (*decode) {
      const auto tokens = codec::tokens_from_text(detail::read_text(in_path));
      const auto res = codec::decode(tokens);
      midi::write_smf_file(out_path, res.score);
      out << res.score.notes.size() << " notes, " << detail::describe(res.warnings) << "\n";
    } else if (*synth) {
      data::SynthOptions opt;
      if (!synth_split.empty()) opt.split = synth_split;
      const auto m = data::synth_dataset(synth_n, synth_seed, out_path, opt);
      out << "wrote " << m.entries.size() << " pairs and " << (std::filesystem::path(out_path) / "manifest.json").string() << "\n";
    } else if (*validate) {
      const std::size_t n = data::validate_manifest(in_path);
      out << "ok: " << n << " entries\n";
    } else if (*train) {
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(detail::read_text(config_path));
      } catch (const nlohmann::json::parse_error& e) {
        throw DataError(config_path + ": " + e.what());
      }
      if (!doc.is_object() || !doc.contains("model") || !doc.contains("train")) {
        throw DataError(config_path + ": expected an object with \"model\" and \"train\"");
      }
      const auto model_cfg = models::model_config_from_json(doc["model"]);
      auto train_cfg = train::train_config_from_json(doc["train"]);
      const auto base = std::filesystem::path(config_path).parent_path();
      train_cfg.manifest = detail::resolve_from(base, train_cfg.manifest);
      train_cfg.checkpoint_dir = detail::resolve_from(base, train_cfg.checkpoint_dir);
      const auto summary = train::train_loop(model_cfg, train_cfg, resume);
      out << "trained to step " << summary.steps << ", train_loss " << summary.last_train_loss;
      if (summary.last_val_loss) out << ", val_loss " << *summary.last_val_loss;
      out << "\ncheckpoint " << train_cfg.checkpoint_path().string() << "\nmetrics " << train_cfg.metrics_path().string() << "\n";
    } else if (*gen) {
      auto loaded = models::load_checkpoint<float>(ckpt_path);
      infer::GenConfig cfg;
      cfg.mode = infer::parse_decode_mode(mode);
      cfg.temperature = temperature;
      cfg.seed = gen_seed;
      cfg.max_len = max_len;
      const auto clip = data::read_vmtf_file(clip_path);
      const auto g = infer::generate_midi(*loaded.model, clip, cfg, loaded.meta.codec);
      midi::write_smf_file(out_path, g.score);
      auto sidecar = std::filesystem::path(out_path);
      sidecar.replace_extension(".json");
      detail::write_text(sidecar, g.report().dump(2) + "\n");
      out << g.tokens.size() << " tokens, " << g.score.notes.size() << " notes, " << g.duration_sec << " s, "
          << detail::describe(g.warnings) << "\n";
    } else if (*viz) {
      detail::write_text(out_path, viz::piano_roll_svg(midi::read_smf_file(in_path)));
      out << "wrote " << out_path << "\n";
    } else if (*grad) {
      bool ok = true;
      for (const auto& r : models::full_gradient_suite(check_seed)) {
        ok = ok && r.passed;
        char line[96];
        std::snprintf(line, sizeof line, "%-4s %-30s entries=%-5zu max_rel_err=%.3e", r.passed ? "ok" : "FAIL", r.name.c_str(),
                      r.checked, r.max_rel_error);
        out << line;
        if (!r.passed) out << "  " << r.worst;
        out << "\n";
      }
      if (!ok) {
        err << "gradient check failed\n";
        return kNumeric;
      }
    }
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}

}  // namespace vmt::cli
