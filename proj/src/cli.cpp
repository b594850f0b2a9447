#include "manner/cli.hpp"

#include <algorithm>
#include <exception>
#include <optional>
#include <ostream>

#include <omp.h>

#include <CLI11.hpp>

#include "manner/error.hpp"
#include "manner/pipeline.hpp"

namespace manner::cli {

namespace {

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  int jobs = 0;
  std::string output_dir;
  std::vector<std::string> overrides;
};

pipeline::PipelineConfig load(const Globals& g) {
  if (g.config.empty()) throw UsageError("--config is required for this command");
  auto cfg = pipeline::load_config(g.config, g.overrides);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.output_dir.empty()) cfg.output_dir = g.output_dir;
  return cfg;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gesture pattern mining and mannerism prediction pipeline", "manner"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON pipeline configuration");
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--jobs", g.jobs, "Worker threads (0 keeps the OpenMP default)")->check(CLI::NonNegativeNumber);
  app.add_option("--output-dir", g.output_dir, "Output directory (overrides the config)");
  app.add_option("--set", g.overrides, "Config override key.path=value (repeatable)");

  auto* extract = app.add_subcommand("extract", "Learn movement patterns and their occurrences per video");
  auto* feats = app.add_subcommand("features", "Compute the feature table for every pattern");
  auto* train = app.add_subcommand("train", "Fit one model on the feature table");
  std::string model_kind, mode = "classification", source = "crowd_average";
  train->add_option("--model", model_kind, "lasso | max_margin | lda | neural_net")->required();
  train->add_option("--mode", mode, "classification | regression");
  train->add_option("--source", source, "self | crowd_average | all");
  auto* evaluate = app.add_subcommand("evaluate", "Repeated random-split evaluation of every configured model");
  auto* report = app.add_subcommand("report", "Print the tables of the last evaluation");

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic fixture");
  std::string kind, synth_out;
  synth::SiscParams sp;
  synth::ClassificationParams cp;
  synth::ToyParams tp;
  synth_cmd->add_option("--kind", kind, "sisc | classification | toy")->required();
  synth_cmd->add_option("--out", synth_out, "Directory to write into")->required();
  synth_cmd->add_option("--length", sp.length, "sisc: samples");
  synth_cmd->add_option("--channels", sp.channels, "sisc: channels");
  synth_cmd->add_option("--patterns", sp.num_patterns, "sisc: planted patterns");
  synth_cmd->add_option("--pattern-length", sp.pattern_length, "sisc: samples per pattern");
  synth_cmd->add_option("--occurrences", sp.occurrences_per_pattern, "sisc: occurrences per pattern");
  synth_cmd->add_option("--noise", sp.noise_sd, "sisc: Gaussian noise standard deviation");
  synth_cmd->add_option("--rate", sp.sample_rate_hz, "sisc: sample rate in Hz");
  synth_cmd->add_option("--rows", cp.rows, "classification: feature rows");
  synth_cmd->add_option("--self-fraction", cp.self_fraction, "classification: fraction of rows with a self rating");
  synth_cmd->add_option("--crowd-strength", cp.crowd_strength, "classification: planted crowd signal");
  synth_cmd->add_option("--self-strength", cp.self_strength, "classification: planted self signal");
  synth_cmd->add_flag("--permute-self", cp.permute_self, "classification: shuffle self ratings");
  synth_cmd->add_option("--videos", tp.videos, "toy: number of videos");
  synth_cmd->add_option("--seconds", tp.seconds, "toy: clip length in seconds");
  synth_cmd->add_option("--lexicon-categories", tp.lexicon_categories, "toy: lexicon size (>= 23)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << one_line(e.what()) << '\n';
    return 1;
  }

  try {
    if (g.jobs > 0) omp_set_num_threads(g.jobs);
    if (*extract) {
      pipeline::cmd_extract(load(g), err);
    } else if (*feats) {
      pipeline::cmd_features(load(g), err);
    } else if (*train) {
      const auto k = models::parse_kind(model_kind);
      const auto m = models::parse_mode(mode);
      const auto s = pipeline::parse_source_filter(source);
      pipeline::cmd_train(load(g), k, m, s, err);
    } else if (*evaluate) {
      pipeline::cmd_evaluate(load(g), err);
    } else if (*report) {
      pipeline::cmd_report(load(g), out);
    } else if (*synth_cmd) {
      const std::uint64_t seed = g.seed.value_or(0);
      if (kind == "sisc") {
        pipeline::synth_sisc(synth_out, sp, seed);
      } else if (kind == "classification") {
        pipeline::synth_classification(synth_out, cp, seed);
      } else if (kind == "toy") {
        synth::write_toy_dataset(synth_out, tp, seed);
      } else {
        throw UsageError("unknown synth kind '" + kind + "' (expected sisc, classification or toy)");
      }
      err << "synth: wrote " << kind << " fixture to " << synth_out << '\n';
    }
  } catch (const Error& e) {
    err << "error[" << e.tag() << "]: " << one_line(e.what()) << '\n';
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error[data]: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error[internal]: " << one_line(e.what()) << '\n';
    return 3;
  }
  return 0;
}

}  // namespace manner::cli
