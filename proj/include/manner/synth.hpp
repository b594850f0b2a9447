#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "manner/features.hpp"
#include "manner/signal.hpp"
#include "manner/sisc.hpp"

// Synthetic fixture generators. They double as test oracles: the planted
// ground truth is returned alongside the data.
namespace manner::synth {

struct SiscParams {
  std::size_t length = 3000;
  std::size_t channels = 6;
  std::size_t num_patterns = 2;
  std::size_t pattern_length = 30;
  std::size_t occurrences_per_pattern = 10;
  double noise_sd = 0.01;
  double sample_rate_hz = 30.0;
  double min_amplitude = 2.0;
  double max_amplitude = 4.0;
  void validate() const;
};

struct SiscFixture {
  signal::MultichannelSignal signal;
  sisc::PatternDictionary dictionary;
  sisc::ActivationSet activations;
};

SiscFixture make_sisc(const SiscParams& params, std::uint64_t seed);

/// Best normalized cross-correlation of `a` against `b` over all relative
/// shifts, ignoring amplitude. Zero-padded outside the overlap.
double shift_aligned_ncc(const Matrix& a, const Matrix& b);

struct ClassificationParams {
  std::size_t rows = 300;
  /// Fraction of rows that also carry a self rating.
  double self_fraction = 1.0 / 3.0;
  /// Weight of the planted linear signal in the crowd rating latent.
  double crowd_strength = 3.0;
  /// Weight of the lexical signal in the self rating latent.
  double self_strength = 1.2;
  /// Replace self ratings by a random permutation (no signal at all).
  bool permute_self = false;
  void validate() const;
};

struct ClassificationFixture {
  features::FeatureMatrix matrix;
  std::vector<signal::AnnotationRecord> annotations;
};

/// Feature table with planted signal. Crowd ratings are driven by prosody and
/// body columns; self ratings by lexical columns. Strength 0 gives labels
/// independent of the features.
ClassificationFixture make_classification(const ClassificationParams& params, std::uint64_t seed);

/// Built-in 23-category lexicon used by the synthetic fixtures.
signal::CategoryLexicon default_lexicon();
std::string lexicon_text(const signal::CategoryLexicon& lexicon);

struct ToyParams {
  std::size_t videos = 10;
  double seconds = 30.0;
  double sample_rate_hz = 30.0;
  std::size_t lexicon_categories = 23;
};

/// Writes a complete small pipeline input set (skeleton signals, transcripts,
/// prosody, face tracks, lexicon, annotations and config.json) into `dir`.
void write_toy_dataset(const std::filesystem::path& dir, const ToyParams& params, std::uint64_t seed);

}  // namespace manner::synth
