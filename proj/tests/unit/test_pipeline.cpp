#include <doctest.h>

#include <cmath>
#include <sstream>

#include "manner/cli.hpp"
#include "manner/error.hpp"
#include "manner/eval.hpp"
#include "manner/io_util.hpp"
#include "manner/pipeline.hpp"
#include "test_util.hpp"

using namespace manner;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

bool single_error_line(const std::string& err, const std::string& tag) {
  const auto pos = err.find("error[" + tag + "]: ");
  if (pos == std::string::npos) return false;
  return err.find('\n', pos) == err.size() - 1;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("usage errors exit with code 1") {
    auto r = cli_run({});
    CHECK(r.code == 1);
    CHECK(single_error_line(r.err, "usage"));
    r = cli_run({"frobnicate"});
    CHECK(r.code == 1);
    r = cli_run({"train"});
    CHECK(r.code == 1);
    r = cli_run({"--config", "/nonexistent/config.json", "extract"});
    CHECK(r.code == 1);
    CHECK(single_error_line(r.err, "usage"));
    r = cli_run({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("extract") != std::string::npos);
  }

  TEST_CASE("config parsing, overrides and path resolution") {
    const nlohmann::json doc = {{"seed", 5},
                                {"output_dir", "run"},
                                {"videos", {{{"id", "v1"}, {"signal", "v1.csv"}, {"transcript", "t"}, {"prosody", "p"}, {"face", "f"}}}},
                                {"solver", {{"lambda", 0.1}}}};
    const auto cfg = pipeline::parse_config(doc, "/data/project", {"solver.max_iters=42", "eval.models=[\"lda\"]"});
    CHECK(cfg.seed == 5);
    CHECK(cfg.output_dir == fs::path("/data/project/run"));
    CHECK(cfg.videos.at(0).signal == fs::path("/data/project/v1.csv"));
    CHECK(cfg.solver.max_iters == 42);
    CHECK(cfg.eval.models == std::vector<models::Kind>{models::Kind::lda});
    CHECK(cfg.features_path() == fs::path("/data/project/run/features/features.csv"));

    auto bad = doc;
    bad["solvr"] = nlohmann::json::object();
    CHECK_THROWS_AS(pipeline::parse_config(bad, "/x"), UsageError);
    CHECK_THROWS_AS(pipeline::parse_config(doc, "/x", {"train.C=-1"}), UsageError);
    CHECK_THROWS_AS(pipeline::parse_config(doc, "/x", {"no_equals_sign"}), UsageError);

    CHECK(pipeline::extract_seed(cfg, 0) != pipeline::extract_seed(cfg, 1));
    CHECK(pipeline::train_seed(cfg) != pipeline::eval_seed(cfg));
  }

  TEST_CASE("synth sisc without noise emits the exact planted model") {
    testutil::TempDir dir("synth");
    const auto r = cli_run({"--seed", "9", "synth", "--kind", "sisc", "--out", dir.path().string(), "--noise", "0",
                            "--length", "600", "--occurrences", "4"});
    REQUIRE(r.code == 0);
    const auto sig = signal::load_signal(dir / "signal.csv");
    auto j = nlohmann::json::parse(io::read_file(dir / "truth.json"));
    CHECK(j["format"] == "sisc-truth/1");
    j["format"] = "sisc-fit/1";
    j["trace"] = {{"objective", nlohmann::json::array()}, {"final_objective", 0.0}, {"iterations", 0}, {"converged", false}};
    const auto truth = sisc::fit_result_from_json(j);
    CHECK(sisc::reconstruct(truth.dictionary, truth.activations, sig.length()) == sig.samples());

    testutil::TempDir again("synth2");
    REQUIRE(cli_run({"--seed", "9", "synth", "--kind", "sisc", "--out", again.path().string(), "--noise", "0",
                     "--length", "600", "--occurrences", "4"})
                .code == 0);
    CHECK(io::read_file(dir / "signal.csv") == io::read_file(again / "signal.csv"));
    CHECK(io::read_file(dir / "truth.json") == io::read_file(again / "truth.json"));

    CHECK(cli_run({"synth", "--kind", "sisc", "--out", dir.path().string(), "--length", "10"}).code == 1);
    CHECK(cli_run({"synth", "--kind", "banana", "--out", dir.path().string()}).code == 1);
  }

  TEST_CASE("extract finds the planted impulses") {
    testutil::TempDir dir("extract");
    synth::SiscParams p;
    pipeline::synth_sisc(dir.path(), p, 4);
    const auto fx = synth::make_sisc(p, 4);
    const nlohmann::json config = {
        {"seed", 4},
        {"output_dir", "out"},
        {"videos", {{{"id", "s"}, {"signal", "signal.csv"}, {"transcript", "-"}, {"prosody", "-"}, {"face", "-"}}}},
        {"solver", {{"num_patterns", 2}, {"pattern_seconds", 1.0}, {"lambda", 0.02}, {"max_iters", 1000}, {"min_amplitude_frac", 0.3}}}};
    testutil::write_text(dir / "config.json", config.dump());
    const auto r = cli_run({"--config", (dir / "config.json").string(), "extract"});
    REQUIRE(r.code == 0);
    const auto occ = sisc::parse_occurrences_csv(dir / "out/extract/s.occurrences.csv", p.sample_rate_hz);
    REQUIRE_FALSE(occ.empty());

    std::size_t planted = 0, matched = 0;
    for (std::size_t d = 0; d < fx.activations.count(); ++d)
      for (std::size_t k = 0; k < p.length; ++k) {
        if (fx.activations.trains(d, k) == 0.0) continue;
        ++planted;
        for (const auto& o : occ)
          if (std::abs(static_cast<long>(o.start_index) - static_cast<long>(k)) <= 3) {
            ++matched;
            break;
          }
      }
    CHECK(planted == 20);
    CHECK(matched == planted);
  }

  TEST_CASE("train: zero-row join and unknown model kind") {
    testutil::TempDir dir("train");
    synth::ClassificationParams cp;
    pipeline::synth_classification(dir.path(), cp, 3);
    // Keep only crowd rows so a self-filtered join is empty.
    const auto lines = io::read_lines(dir / "annotations.csv");
    std::string crowd_only = lines[0] + "\n";
    for (std::size_t i = 1; i < lines.size(); ++i)
      if (lines[i].find(",self") == std::string::npos) crowd_only += lines[i] + "\n";
    testutil::write_text(dir / "annotations.csv", crowd_only);
    const auto cfg = (dir / "config.json").string();

    auto r = cli_run({"--config", cfg, "train", "--model", "lasso", "--source", "self"});
    CHECK(r.code == 2);
    CHECK(single_error_line(r.err, "data"));
    r = cli_run({"--config", cfg, "train", "--model", "svm"});
    CHECK(r.code == 1);
    CHECK(single_error_line(r.err, "usage"));
    r = cli_run({"--config", cfg, "train", "--model", "lasso", "--source", "everyone"});
    CHECK(r.code == 1);
  }

  TEST_CASE("train: separable labels give training AUC 1") {
    testutil::TempDir dir("sep");
    synth::ClassificationParams cp;
    pipeline::synth_classification(dir.path(), cp, 8);
    const auto fm = features::load_feature_matrix(dir / "features.csv");
    std::string ann = "video_id,pattern_id,rating,source\n";
    for (std::size_t i = 0; i < fm.rows(); ++i) {
      const double s = fm.values(i, 10) - fm.values(i, 40) + 0.5 * fm.values(i, 100);
      ann += fm.keys[i].video_id + "," + std::to_string(fm.keys[i].pattern_id) + "," + (s > 0 ? "6" : "2") +
             ",crowd_average\n";
    }
    testutil::write_text(dir / "annotations.csv", ann);
    const auto r = cli_run({"--config", (dir / "config.json").string(), "--set", "train.lasso_lambda=0.001", "train",
                            "--model", "lasso"});
    REQUIRE(r.code == 0);
    const auto model_path = dir / "out/models/lasso_classification_crowd_average.json";
    REQUIRE(fs::exists(model_path));
    const auto j = nlohmann::json::parse(io::read_file(model_path));
    const auto weights = models::ModelWeights::from_json(j);
    const auto z = features::ZScoreParams::from_json(j.at("normalization"));
    std::vector<double> y;
    for (std::size_t i = 0; i < fm.rows(); ++i) {
      const double s = fm.values(i, 10) - fm.values(i, 40) + 0.5 * fm.values(i, 100);
      y.push_back(s > 0 ? 1.0 : 0.0);
    }
    CHECK(eval::auc(models::predict(weights, z.apply(fm.values)), y) == 1.0);
  }

  TEST_CASE("toy pipeline end to end") {
    testutil::TempDir dir("toy");
    synth::ToyParams tp;
    synth::write_toy_dataset(dir.path(), tp, 2);
    const auto cfg = (dir / "config.json").string();
    const std::vector<std::string> fast = {"--set", "eval.n_repeats=4", "--set", "train.nn_epochs=50"};
    auto with = [&](std::vector<std::string> cmd) {
      std::vector<std::string> args = {"--config", cfg, "--seed", "2"};
      args.insert(args.end(), fast.begin(), fast.end());
      args.insert(args.end(), cmd.begin(), cmd.end());
      return cli_run(args);
    };
    REQUIRE(with({"extract"}).code == 0);
    const auto feats = with({"features"});
    REQUIRE(feats.code == 0);
    const auto fm = features::load_feature_matrix(dir / "out/features/features.csv");
    CHECK(fm.columns.size() == 122);
    CHECK(fm.rows() >= 3);
    const auto norm = features::load_feature_matrix(dir / "out/features/features_normalized.csv");
    for (std::size_t c = 0; c < norm.columns.size(); ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < norm.rows(); ++i) mean += norm.values(i, c);
      CHECK(std::abs(mean / static_cast<double>(norm.rows())) < 1e-9);
    }
    REQUIRE(with({"train", "--model", "lda", "--mode", "regression", "--source", "all"}).code == 0);
    CHECK(fs::exists(dir / "out/models/lda_regression_all.json"));
    REQUIRE(with({"evaluate"}).code == 0);
    const auto rep = nlohmann::json::parse(io::read_file(dir / "out/evaluate/report.json"));
    CHECK(rep["format"] == "manner-eval/1");
    for (const auto& w : rep["weights"]) {
      double total = 0.0;
      for (const auto& c : w["categories"]) total += c["percent"].get<double>();
      if (!w["categories"].empty()) CHECK(std::abs(total - 100.0) <= 1e-9);
    }
    const auto report = with({"report"});
    CHECK(report.code == 0);
    CHECK(report.out.find("lasso") != std::string::npos);

    // Rerunning a stage reproduces its outputs byte for byte.
    const auto before = io::read_file(dir / "out/evaluate/report.json");
    REQUIRE(with({"evaluate"}).code == 0);
    CHECK(io::read_file(dir / "out/evaluate/report.json") == before);

    // A missing track file is reported with the video id.
    fs::remove(dir / "v01.face.csv");
    const auto missing = with({"features"});
    CHECK(missing.code == 2);
    CHECK(missing.err.find("v01") != std::string::npos);
  }

  TEST_CASE("features warn on patterns without occurrences") {
    testutil::TempDir dir("warn");
    synth::ToyParams tp;
    tp.videos = 1;
    tp.seconds = 20;
    synth::write_toy_dataset(dir.path(), tp, 6);
    const auto cfg = (dir / "config.json").string();
    REQUIRE(cli_run({"--config", cfg, "--set", "solver.num_patterns=6", "extract"}).code == 0);
    // Blank out the occurrence list of pattern 0.
    const auto occ_path = dir / "out/extract/v00.occurrences.csv";
    const auto lines = io::read_lines(occ_path);
    std::string kept = lines[0] + "\n";
    for (std::size_t i = 1; i < lines.size(); ++i)
      if (lines[i].rfind("v00,0,", 0) != 0) kept += lines[i] + "\n";
    testutil::write_text(occ_path, kept);
    const auto r = cli_run({"--config", cfg, "--set", "solver.num_patterns=6", "features"});
    REQUIRE(r.code == 0);
    CHECK(r.err.find("warning") != std::string::npos);
    const auto fm = features::load_feature_matrix(dir / "out/features/features.csv");
    for (const auto& k : fm.keys) CHECK(k.pattern_id != 0);
  }
}
