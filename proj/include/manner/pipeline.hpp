#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "manner/features.hpp"
#include "manner/models.hpp"
#include "manner/signal.hpp"
#include "manner/sisc.hpp"
#include "manner/synth.hpp"

namespace manner::pipeline {

struct VideoPaths {
  std::string id;
  std::filesystem::path signal;
  std::filesystem::path transcript;
  std::filesystem::path prosody;
  std::filesystem::path face;
};

struct EvalSettings {
  std::size_t n_repeats = 30;
  double test_fraction = 0.2;
  double subsample_fraction = 1.0 / 3.0;
  std::vector<models::Kind> models = {models::Kind::lasso, models::Kind::max_margin, models::Kind::lda,
                                      models::Kind::neural_net};
  std::vector<models::Mode> modes = {models::Mode::classification, models::Mode::regression};
};

/// Everything a run needs. Relative paths in the file are resolved against
/// the directory holding the config file.
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::vector<VideoPaths> videos;
  std::filesystem::path lexicon;
  std::filesystem::path annotations;
  /// Feature table read by train/evaluate; defaults to the one `features` writes.
  std::optional<std::filesystem::path> features;
  features::FaceMap face_map = features::FaceMap::default_66();
  signal::JointLayout joint_layout = signal::JointLayout::kinect_v1();
  sisc::SolverConfig solver;
  double min_amplitude_frac = 0.1;
  models::TrainConfig train;
  EvalSettings eval;

  std::filesystem::path features_path() const;
};

/// Applies `key.path=value` overrides (value parsed as JSON, else taken as a
/// string) to the raw document, then validates it.
PipelineConfig parse_config(nlohmann::json doc, const std::filesystem::path& base_dir,
                            const std::vector<std::string>& overrides = {});
PipelineConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Stage seeds, all derived from the master seed.
std::uint64_t extract_seed(const PipelineConfig& cfg, std::size_t video_index);
std::uint64_t selection_seed(const PipelineConfig& cfg);
std::uint64_t train_seed(const PipelineConfig& cfg);
std::uint64_t eval_seed(const PipelineConfig& cfg);

/// Diagnostics (progress, warnings) go to `log`; results go to files.
void cmd_extract(const PipelineConfig& cfg, std::ostream& log);
void cmd_features(const PipelineConfig& cfg, std::ostream& log);

enum class SourceFilter { self, crowd_average, all };
SourceFilter parse_source_filter(const std::string& s);
std::string to_string(SourceFilter f);

/// Returns the path of the written model file.
std::filesystem::path cmd_train(const PipelineConfig& cfg, models::Kind kind, models::Mode mode, SourceFilter source,
                                std::ostream& log);
void cmd_evaluate(const PipelineConfig& cfg, std::ostream& log);
/// Prints the tables of a finished evaluation to `out`.
void cmd_report(const PipelineConfig& cfg, std::ostream& out);

/// Joined training data: feature rows matched to annotation rows by
/// (video_id, pattern_id), in annotation-file order.
struct Joined {
  Matrix x;
  std::vector<int> ratings;
  std::vector<features::RowKey> keys;
};
Joined join_annotations(const features::FeatureMatrix& fm, const std::vector<signal::AnnotationRecord>& annotations,
                        SourceFilter source);
std::vector<double> targets(const std::vector<int>& ratings, models::Mode mode);

/// Writes signal.csv and truth.json (the planted dictionary and activations).
void synth_sisc(const std::filesystem::path& dir, const synth::SiscParams& params, std::uint64_t seed);
/// Writes features.csv, annotations.csv and a config.json that points
/// train/evaluate at them.
void synth_classification(const std::filesystem::path& dir, const synth::ClassificationParams& params,
                          std::uint64_t seed);

}  // namespace manner::pipeline
