#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "manner/features.hpp"
#include "manner/matrix.hpp"
#include "manner/models.hpp"

namespace manner::eval {

/// Rating >= 4 is meaningful (1); below 4 is a mannerism (0).
int binarize(int rating);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

/// Labels are {0, 1}; 1 is the positive class. One point per distinct score
/// threshold, from (0,0) to (1,1), tied scores grouped.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const double> labels);
double trapezoid_area(std::span<const RocPoint> curve);

/// Mann-Whitney statistic: fraction of (positive, negative) pairs ordered
/// correctly, ties counting one half.
double auc(std::span<const double> scores, std::span<const double> labels);

/// Throws DataError when either input is constant.
double pearson(std::span<const double> pred, std::span<const double> actual);

struct SplitSpec {
  std::size_t n_repeats = 30;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  void validate() const;
};

struct SplitOutcome {
  std::vector<double> metrics;  // AUC (classification) or Pearson r (regression)
  double mean = 0.0;
  /// Vertically averaged ROC on a 101-point FPR grid; classification only.
  std::vector<RocPoint> mean_roc;
};

/// Train/test indices for one repeat; redraws (at most 100 times) until both
/// classes appear on each side in classification mode.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
Split draw_split(std::span<const double> y, models::Mode mode, double test_fraction, std::uint64_t repeat_seed);

/// Per repeat: seeded split, z-score fitted on the training rows, fit, score
/// the test rows. `x` is the raw (unnormalized) feature table. Repeats run in
/// parallel; each derives its seed from (spec.seed, repeat) so the result is
/// independent of the thread count.
SplitOutcome repeated_splits(const Matrix& x, std::span<const double> y, models::Kind kind, models::Mode mode,
                             const SplitSpec& spec, const models::TrainConfig& cfg);

/// Sorted row indices of the subsample used by repeat `repeat`.
std::vector<std::size_t> subsample_rows(std::size_t n, double fraction, std::uint64_t seed, std::size_t repeat);

/// Per repeat: subsample ceil(fraction * N) rows, then one split/train/score
/// exactly as repeated_splits would do for that repeat.
SplitOutcome subsample_experiment(const Matrix& x, std::span<const double> y, double fraction, models::Kind kind,
                                  models::Mode mode, const SplitSpec& spec, const models::TrainConfig& cfg);

struct TTest {
  double t = 0.0;
  double p = 1.0;
  double dof = 0.0;
};

/// Welch's unequal-variance t-test, two-sided.
TTest welch_ttest(std::span<const double> a, std::span<const double> b);

/// I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);
/// P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
double student_t_two_sided_p(double t, double dof);

inline constexpr double kNonzeroWeight = 1e-10;

struct CategoryShare {
  features::Category category;
  double weight = 0.0;      // mean |w| over nonzero weights in the category
  std::size_t nonzero = 0;  // features with |w| > kNonzeroWeight
  double percent = 0.0;
};

/// Per-category mean absolute nonzero weight, as a percentage of the total.
/// Categories appear in enum order, only those present in `categories`.
std::vector<CategoryShare> category_weights(std::span<const double> coefficients,
                                            std::span<const features::Category> categories);

}  // namespace manner::eval
