#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "manner/matrix.hpp"
#include "manner/signal.hpp"

namespace manner::sisc {

/// D patterns, each M samples by C channels.
struct PatternDictionary {
  std::vector<Matrix> patterns;
  double sample_rate_hz = 1.0;

  std::size_t count() const noexcept { return patterns.size(); }
  std::size_t length() const noexcept { return patterns.empty() ? 0 : patterns.front().rows(); }
  std::size_t channels() const noexcept { return patterns.empty() ? 0 : patterns.front().cols(); }
  void validate_shape() const;
};

/// One nonnegative impulse train per pattern, stored as a D x N matrix.
struct ActivationSet {
  Matrix trains;

  std::size_t count() const noexcept { return trains.rows(); }
  std::size_t length() const noexcept { return trains.cols(); }
};

struct SolverConfig {
  std::size_t num_patterns = 5;
  double pattern_seconds = 2.0;
  double lambda = 0.0;  // required; validate() rejects the default
  std::size_t max_iters = 500;
  double rel_tol = 1e-5;
  std::uint64_t seed = 0;

  /// Pattern length in samples for the given rate.
  std::size_t pattern_length(double sample_rate_hz) const;
  void validate(double sample_rate_hz) const;
};

struct PatternOccurrence {
  int pattern_id = 0;
  std::size_t start_index = 0;
  double start_s = 0.0;
  double amplitude = 0.0;
};

struct SolveTrace {
  std::vector<double> objective;  // initial value, then one entry per iteration
  double final_objective = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

struct FitResult {
  PatternDictionary dictionary;
  ActivationSet activations;
  SolveTrace trace;
};

/// Convolutional model: out[n] = sum_d sum_m acts_d[n - m] * psi_d[m].
Matrix reconstruct(const PatternDictionary& dict, const ActivationSet& acts, std::size_t n);

/// 0.5 * ||f - model||^2 + lambda * ||acts||_1.
double objective(const signal::MultichannelSignal& f, const PatternDictionary& dict,
                 const ActivationSet& acts, double lambda);

/// Gradients of the residual term 0.5 * ||f - model||^2.
std::vector<Matrix> grad_psi(const signal::MultichannelSignal& f, const PatternDictionary& dict,
                             const ActivationSet& acts);
Matrix grad_alpha(const signal::MultichannelSignal& f, const PatternDictionary& dict,
                  const ActivationSet& acts);

/// Elementwise sgn(a) * max(0, |a| - threshold).
ActivationSet shrink(const ActivationSet& acts, double threshold);
/// Scales each pattern by 1 / max(1, ||psi_d||_F).
PatternDictionary project_dictionary(const PatternDictionary& dict);
/// Clamps negative activations to zero.
ActivationSet project_activations(const ActivationSet& acts);

/// Alternating projected-gradient solver with backtracking line search.
/// Throws DataError for N <= M or a bad config, NumericalError when the
/// objective stops being finite.
FitResult fit(const signal::MultichannelSignal& f, const SolverConfig& cfg);

/// Peaks of each train above min_amplitude_frac of that train's maximum;
/// peaks closer than pattern_length / 2 samples keep only the larger one.
std::vector<PatternOccurrence> extract_occurrences(const ActivationSet& acts, std::size_t pattern_length,
                                                   double min_amplitude_frac, double sample_rate_hz);

double frobenius_norm(const Matrix& m);

nlohmann::json to_json(const FitResult& result);
FitResult fit_result_from_json(const nlohmann::json& j);

std::string occurrences_csv(const std::string& video_id, const std::vector<PatternOccurrence>& occ);
/// Every row of an occurrence CSV; start_index is recovered from start_s and
/// the rate.
std::vector<PatternOccurrence> parse_occurrences_csv(const std::filesystem::path& path, double sample_rate_hz);

}  // namespace manner::sisc
