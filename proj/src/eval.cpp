#include "manner/eval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "manner/error.hpp"
#include "manner/rng.hpp"

namespace manner::eval {

namespace {

void check_binary(std::span<const double> scores, std::span<const double> labels, std::size_t& pos,
                  std::size_t& neg) {
  if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
  pos = 0;
  neg = 0;
  for (double l : labels) {
    if (l == 1.0) ++pos;
    else if (l == 0.0) ++neg;
    else throw DataError("labels must be 0 or 1");
  }
  if (pos == 0 || neg == 0) throw DataError("ROC analysis needs both classes");
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_variance(std::span<const double> v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

// TPR at each FPR grid point, by linear interpolation along the curve (the
// highest TPR is used where the curve is vertical).
std::vector<double> resample_roc(const std::vector<RocPoint>& curve, std::size_t grid) {
  std::vector<double> out(grid);
  for (std::size_t g = 0; g < grid; ++g) {
    const double f = static_cast<double>(g) / static_cast<double>(grid - 1);
    double tpr = 0.0;
    for (std::size_t i = 0; i < curve.size(); ++i) {
      if (curve[i].fpr <= f) tpr = std::max(tpr, curve[i].tpr);
      if (i > 0 && curve[i - 1].fpr < f && curve[i].fpr > f) {
        const double w = (f - curve[i - 1].fpr) / (curve[i].fpr - curve[i - 1].fpr);
        tpr = std::max(tpr, curve[i - 1].tpr + w * (curve[i].tpr - curve[i - 1].tpr));
      }
    }
    out[g] = tpr;
  }
  return out;
}

struct RepeatResult {
  double metric = 0.0;
  std::vector<RocPoint> roc;
};

RepeatResult run_repeat(const Matrix& x, std::span<const double> y, std::span<const std::size_t> rows,
                        models::Kind kind, models::Mode mode, double test_fraction, std::uint64_t repeat_seed,
                        const models::TrainConfig& cfg) {
  std::vector<double> sub_y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) sub_y[i] = y[rows[i]];
  const Split split = draw_split(sub_y, mode, test_fraction, repeat_seed);

  std::vector<std::size_t> train_rows, test_rows;
  std::vector<double> train_y, test_y;
  for (auto i : split.train) {
    train_rows.push_back(rows[i]);
    train_y.push_back(sub_y[i]);
  }
  for (auto i : split.test) {
    test_rows.push_back(rows[i]);
    test_y.push_back(sub_y[i]);
  }
  const auto zs = features::ZScoreParams::fit(x.select_rows(train_rows));
  const Matrix train_x = zs.apply(x.select_rows(train_rows));
  const Matrix test_x = zs.apply(x.select_rows(test_rows));

  models::TrainConfig local = cfg;
  local.seed = derive_seed(repeat_seed, 0xC0FFEE);
  const auto model = models::fit(kind, train_x, train_y, mode, local);
  const auto scores = models::predict(model, test_x);

  RepeatResult r;
  if (mode == models::Mode::classification) {
    r.metric = auc(scores, test_y);
    r.roc = roc_curve(scores, test_y);
  } else {
    // Constant predictions (e.g. an all-zero LASSO) carry no correlation.
    try {
      r.metric = pearson(scores, test_y);
    } catch (const DataError&) {
      r.metric = 0.0;
    }
  }
  return r;
}

SplitOutcome run_repeats(const Matrix& x, std::span<const double> y, models::Kind kind, models::Mode mode,
                         const SplitSpec& spec, const models::TrainConfig& cfg, double fraction) {
  spec.validate();
  if (x.rows() != y.size()) throw DataError("feature rows and targets differ in length");
  const std::size_t reps = spec.n_repeats;
  std::vector<RepeatResult> results(reps);
  std::vector<std::exception_ptr> errors(reps);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(reps); ++r) {
    try {
      const auto rep = static_cast<std::size_t>(r);
      const auto rows = subsample_rows(x.rows(), fraction, spec.seed, rep);
      results[rep] = run_repeat(x, y, rows, kind, mode, spec.test_fraction, derive_seed(spec.seed, rep), cfg);
    } catch (...) {
      errors[static_cast<std::size_t>(r)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  SplitOutcome out;
  for (const auto& r : results) out.metrics.push_back(r.metric);
  out.mean = mean_of(out.metrics);
  if (mode == models::Mode::classification) {
    constexpr std::size_t kGrid = 101;
    std::vector<double> acc(kGrid, 0.0);
    for (const auto& r : results) {
      const auto t = resample_roc(r.roc, kGrid);
      for (std::size_t g = 0; g < kGrid; ++g) acc[g] += t[g];
    }
    for (std::size_t g = 0; g < kGrid; ++g)
      out.mean_roc.push_back({static_cast<double>(g) / (kGrid - 1), acc[g] / static_cast<double>(reps)});
  }
  return out;
}

}  // namespace

int binarize(int rating) {
  if (rating < 1 || rating > 7) throw DataError("rating " + std::to_string(rating) + " outside 1..7");
  return rating >= 4 ? 1 : 0;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const double> labels) {
  std::size_t pos = 0, neg = 0;
  check_binary(scores, labels, pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> curve{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      if (labels[order[i]] == 1.0) ++tp;
      else ++fp;
      ++i;
    }
    curve.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                     static_cast<double>(tp) / static_cast<double>(pos)});
  }
  return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double a = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    a += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) * 0.5;
  return a;
}

double auc(std::span<const double> scores, std::span<const double> labels) {
  std::size_t pos = 0, neg = 0;
  check_binary(scores, labels, pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the midrank keeps every rank an integer, so the sum is exact.
  double rank2_pos = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double rank2 = static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1.0) rank2_pos += rank2;
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  const double u2 = rank2_pos - p * (p + 1.0);
  return u2 / (2.0 * p * n);
}

double pearson(std::span<const double> pred, std::span<const double> actual) {
  if (pred.size() != actual.size()) throw DataError("pearson: inputs differ in length");
  if (pred.size() < 2) throw DataError("pearson: need at least 2 points");
  const double mp = mean_of(pred), ma = mean_of(actual);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = pred[i] - mp, b = actual[i] - ma;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  const bool pred_const = std::all_of(pred.begin(), pred.end(), [&](double v) { return v == pred[0]; });
  const bool act_const = std::all_of(actual.begin(), actual.end(), [&](double v) { return v == actual[0]; });
  if (pred_const || act_const || sxx == 0.0 || syy == 0.0) throw DataError("pearson: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

void SplitSpec::validate() const {
  if (n_repeats < 1) throw DataError("n_repeats must be >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw DataError("test_fraction must lie in (0, 1)");
}

Split draw_split(std::span<const double> y, models::Mode mode, double test_fraction, std::uint64_t repeat_seed) {
  const std::size_t n = y.size();
  if (n < 4) throw DataError("need at least 4 rows for a train/test split");
  const auto n_test = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n))), 1, n - 2);
  constexpr int kAttempts = 100;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    Rng rng(derive_seed(repeat_seed, static_cast<std::uint64_t>(attempt)));
    const auto perm = rng.permutation(n);
    Split s;
    s.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
    std::sort(s.test.begin(), s.test.end());
    std::sort(s.train.begin(), s.train.end());
    if (mode == models::Mode::regression) return s;
    auto has_both = [&](const std::vector<std::size_t>& idx) {
      bool pos = false, neg = false;
      for (auto i : idx) (y[i] == 1.0 ? pos : neg) = true;
      return pos && neg;
    };
    if (has_both(s.test) && has_both(s.train)) return s;
  }
  throw DataError("could not draw a split with both classes in train and test after 100 attempts");
}

SplitOutcome repeated_splits(const Matrix& x, std::span<const double> y, models::Kind kind, models::Mode mode,
                             const SplitSpec& spec, const models::TrainConfig& cfg) {
  return run_repeats(x, y, kind, mode, spec, cfg, 1.0);
}

std::vector<std::size_t> subsample_rows(std::size_t n, double fraction, std::uint64_t seed, std::size_t repeat) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DataError("subsample fraction must lie in (0, 1]");
  // The epsilon keeps exact products such as (1/3) * 300 from rounding up.
  const auto size = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> rows;
  if (size == n) {
    rows.resize(n);
    std::iota(rows.begin(), rows.end(), 0);
    return rows;
  }
  Rng rng(derive_seed(seed ^ 0x5A8B5A3C1D2E4F6ULL, repeat));
  auto perm = rng.permutation(n);
  rows.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(size));
  std::sort(rows.begin(), rows.end());
  return rows;
}

SplitOutcome subsample_experiment(const Matrix& x, std::span<const double> y, double fraction, models::Kind kind,
                                  models::Mode mode, const SplitSpec& spec, const models::TrainConfig& cfg) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DataError("subsample fraction must lie in (0, 1]");
  return run_repeats(x, y, kind, mode, spec, cfg, fraction);
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw DataError("incomplete beta needs positive shape parameters");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - regularized_incomplete_beta(b, a, 1.0 - x);

  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);
  // Modified Lentz evaluation of the continued fraction.
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double dm = m;
    double num = dm * (b - dm) * x / ((a + 2.0 * dm - 1.0) * (a + 2.0 * dm));
    d = 1.0 + num * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + num / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    num = -(a + dm) * (a + b + dm) * x / ((a + 2.0 * dm) * (a + 2.0 * dm + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + num / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::exp(log_front) * h / a;
}

double student_t_two_sided_p(double t, double dof) {
  if (!(dof > 0.0)) throw DataError("t distribution needs positive degrees of freedom");
  if (!std::isfinite(t)) return 0.0;
  return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

TTest welch_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw DataError("t-test needs at least 2 values per sample");
  const double ma = mean_of(a), mb = mean_of(b);
  const double va = sample_variance(a, ma) / static_cast<double>(a.size());
  const double vb = sample_variance(b, mb) / static_cast<double>(b.size());
  if (va == 0.0 && vb == 0.0) throw DataError("t-test is degenerate: both samples have zero variance");
  TTest r;
  r.t = (ma - mb) / std::sqrt(va + vb);
  r.dof = (va + vb) * (va + vb) /
          (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  r.p = student_t_two_sided_p(r.t, r.dof);
  return r;
}

std::vector<CategoryShare> category_weights(std::span<const double> coefficients,
                                            std::span<const features::Category> categories) {
  if (coefficients.size() != categories.size())
    throw DataError("coefficient count does not match the category map");
  constexpr features::Category kOrder[] = {features::Category::disfluency, features::Category::prosody,
                                           features::Category::body, features::Category::face,
                                           features::Category::lexical};
  std::vector<CategoryShare> out;
  double total = 0.0;
  for (auto cat : kOrder) {
    if (std::find(categories.begin(), categories.end(), cat) == categories.end()) continue;
    CategoryShare s{cat};
    double sum = 0.0;
    for (std::size_t i = 0; i < coefficients.size(); ++i) {
      if (categories[i] != cat || !(std::abs(coefficients[i]) > kNonzeroWeight)) continue;
      sum += std::abs(coefficients[i]);
      ++s.nonzero;
    }
    s.weight = s.nonzero ? sum / static_cast<double>(s.nonzero) : 0.0;
    total += s.weight;
    out.push_back(s);
  }
  if (!(total > 0.0)) throw DataError("category weights undefined: model has no nonzero coefficients");
  for (auto& s : out) s.percent = 100.0 * s.weight / total;
  return out;
}

}  // namespace manner::eval
