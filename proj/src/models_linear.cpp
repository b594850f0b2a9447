#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "manner/error.hpp"
#include "manner/eval.hpp"
#include "manner/models.hpp"
#include "manner/rng.hpp"

namespace manner::models {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajor> as_eigen(const Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

void check_xy(const Matrix& x, std::span<const double> y, Mode mode) {
  if (x.rows() != y.size()) throw DataError("feature rows (" + std::to_string(x.rows()) + ") and targets (" +
                                            std::to_string(y.size()) + ") differ");
  if (x.rows() == 0 || x.cols() == 0) throw DataError("empty training matrix");
  for (double v : x.values())
    if (!std::isfinite(v)) throw DataError("training matrix contains non-finite values");
  for (double v : y) {
    if (!std::isfinite(v)) throw DataError("targets contain non-finite values");
    if (mode == Mode::classification && v != 0.0 && v != 1.0)
      throw DataError("classification targets must be 0 or 1");
  }
}

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

// Smooth part of the LASSO objective and its gradient in (beta, intercept).
struct LassoProblem {
  const Matrix& x;
  std::span<const double> y;
  Mode mode;

  double value(const std::vector<double>& beta, double b) const {
    const double n = static_cast<double>(x.rows());
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double z = b;
      const auto row = x.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) z += row[j] * beta[j];
      const double p = mode == Mode::classification ? sigmoid(z) : z;
      s += (y[i] - p) * (y[i] - p);
    }
    return s / n;
  }

  double gradient(const std::vector<double>& beta, double b, std::vector<double>& g_beta, double& g_b) const {
    const double n = static_cast<double>(x.rows());
    std::fill(g_beta.begin(), g_beta.end(), 0.0);
    g_b = 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double z = b;
      const auto row = x.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) z += row[j] * beta[j];
      double dz;
      if (mode == Mode::classification) {
        const double p = sigmoid(z);
        s += (y[i] - p) * (y[i] - p);
        dz = 2.0 / n * (p - y[i]) * p * (1.0 - p);
      } else {
        s += (y[i] - z) * (y[i] - z);
        dz = 2.0 / n * (z - y[i]);
      }
      g_b += dz;
      for (std::size_t j = 0; j < row.size(); ++j) g_beta[j] += dz * row[j];
    }
    return s / n;
  }
};

double initial_intercept(std::span<const double> y, Mode mode) {
  const double m = mean(y);
  if (mode == Mode::regression) return m;
  const double p = std::clamp(m, 1e-6, 1.0 - 1e-6);
  return std::log(p / (1.0 - p));
}

double l1_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

// Accelerated proximal gradient (soft-threshold after each gradient step)
// with backtracking on the quadratic upper bound. The momentum is dropped
// whenever a step would raise the objective, so the objective never
// increases between accepted iterates.
void lasso_solve(const LassoProblem& prob, double lambda, const TrainConfig& cfg, std::vector<double>& beta,
                 double& b) {
  const std::size_t p = prob.x.cols();
  std::vector<double> g(p), cand(p), ext(p), prev = beta;
  double prev_b = b, gb = 0.0, step = 1.0, t = 1.0;
  double f_cur = prob.value(beta, b) + lambda * l1_norm(beta);
  for (std::size_t it = 0; it < cfg.lasso_max_iters; ++it) {
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double mom = (t - 1.0) / t_next;
    for (std::size_t j = 0; j < p; ++j) ext[j] = beta[j] + mom * (beta[j] - prev[j]);
    const double ext_b = b + mom * (b - prev_b);

    const double f0 = prob.gradient(ext, ext_b, g, gb);
    if (!std::isfinite(f0)) throw NumericalError("lasso: non-finite loss at iteration " + std::to_string(it));
    double f1 = 0.0, cand_b = ext_b, moved = 0.0;
    step = std::min(1e4, step * 2.0);
    for (int h = 0; h < 100; ++h) {
      const double thr = step * lambda;
      for (std::size_t j = 0; j < p; ++j) {
        const double v = ext[j] - step * g[j];
        cand[j] = v > thr ? v - thr : (v < -thr ? v + thr : 0.0);
      }
      cand_b = ext_b - step * gb;
      double lin = (cand_b - ext_b) * gb;
      moved = (cand_b - ext_b) * (cand_b - ext_b);
      for (std::size_t j = 0; j < p; ++j) {
        const double d = cand[j] - ext[j];
        lin += d * g[j];
        moved += d * d;
      }
      f1 = prob.value(cand, cand_b);
      if (f1 <= f0 + lin + moved / (2.0 * step) + 1e-15 * std::abs(f0)) break;
      step *= 0.5;
    }
    const double f_cand = f1 + lambda * l1_norm(cand);
    if (f_cand > f_cur && mom > 0.0) {
      // Restart from the current iterate without momentum.
      prev = beta;
      prev_b = b;
      t = 1.0;
      continue;
    }
    prev = beta;
    prev_b = b;
    t = f_cand > f_cur ? 1.0 : t_next;
    if (f_cand <= f_cur) {
      beta = cand;
      b = cand_b;
      f_cur = f_cand;
    }
    double norm = 0.0;
    for (std::size_t j = 0; j < p; ++j) norm += cand[j] * cand[j];
    if (std::sqrt(moved) <= cfg.lasso_tol * (1.0 + std::sqrt(norm + cand_b * cand_b))) break;
  }
}

std::vector<double> score_linear(const Matrix& x, const std::vector<double>& beta, double b) {
  std::vector<double> z(x.rows(), b);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) z[i] += row[j] * beta[j];
  }
  return z;
}

double cv_metric(std::span<const double> scores, std::span<const double> y, Mode mode) {
  if (mode == Mode::classification) return eval::auc(scores, y);
  try {
    return eval::pearson(scores, y);
  } catch (const DataError&) {
    return 0.0;
  }
}

std::vector<std::size_t> regression_folds(std::size_t n, std::size_t folds, std::uint64_t seed) {
  Rng rng(seed);
  const auto perm = rng.permutation(n);
  std::vector<std::size_t> fold(n);
  for (std::size_t i = 0; i < n; ++i) fold[perm[i]] = i % folds;
  return fold;
}

// Cross-validated choice over the grid; ties go to the larger lambda.
double choose_lasso_lambda(const Matrix& x, std::span<const double> y, Mode mode, const TrainConfig& cfg) {
  std::vector<double> grid = cfg.lasso_grid;
  std::sort(grid.begin(), grid.end(), std::greater<>());
  const std::size_t k = cfg.cv_folds;
  const auto fold = mode == Mode::classification ? stratified_folds(y, k, cfg.seed)
                                                 : regression_folds(y.size(), k, cfg.seed);
  std::vector<double> total(grid.size(), 0.0);
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < y.size(); ++i) (fold[i] == f ? te : tr).push_back(i);
    std::vector<double> ytr, yte;
    for (auto i : tr) ytr.push_back(y[i]);
    for (auto i : te) yte.push_back(y[i]);
    if (mode == Mode::classification) {
      const bool ok_te = std::count(yte.begin(), yte.end(), 1.0) > 0 && std::count(yte.begin(), yte.end(), 0.0) > 0;
      const bool ok_tr = std::count(ytr.begin(), ytr.end(), 1.0) > 0 && std::count(ytr.begin(), ytr.end(), 0.0) > 0;
      if (!ok_te || !ok_tr) throw DataError("lasso CV: a fold lacks one class; too few rows for " +
                                            std::to_string(k) + "-fold cross-validation");
    }
    const Matrix xtr = x.select_rows(tr), xte = x.select_rows(te);
    LassoProblem prob{xtr, ytr, mode};
    std::vector<double> beta(x.cols(), 0.0);
    double b = initial_intercept(ytr, mode);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      lasso_solve(prob, grid[g], cfg, beta, b);  // warm start down the path
      auto z = score_linear(xte, beta, b);
      total[g] += cv_metric(z, yte, mode);
    }
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (total[g] > total[best]) best = g;
  return grid[best];
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double lasso_lambda_max(const Matrix& x, std::span<const double> y, Mode mode) {
  check_xy(x, y, mode);
  const double n = static_cast<double>(x.rows());
  // At beta = 0 the optimal intercept predicts mean(y) for every row.
  const double ybar = mean(y);
  const double scale = mode == Mode::classification ? 2.0 / n * ybar * (1.0 - ybar) : 2.0 / n;
  double best = 0.0;
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) s += x(i, j) * (y[i] - ybar);
    best = std::max(best, std::abs(scale * s));
  }
  return best;
}

ModelWeights fit_lasso(const Matrix& x, std::span<const double> y, Mode mode, const TrainConfig& cfg) {
  check_xy(x, y, mode);
  cfg.validate();
  const double lambda = cfg.lasso_lambda ? *cfg.lasso_lambda : choose_lasso_lambda(x, y, mode, cfg);
  LassoProblem prob{x, y, mode};
  std::vector<double> beta(x.cols(), 0.0);
  double b = initial_intercept(y, mode);
  lasso_solve(prob, lambda, cfg, beta, b);

  ModelWeights w;
  w.kind = Kind::lasso;
  w.mode = mode;
  w.coefficients = std::move(beta);
  w.intercept = b;
  w.hyperparameters = {{"lambda", lambda}};
  w.seed = cfg.seed;
  w.feature_count = x.cols();
  return w;
}

ModelWeights fit_max_margin(const Matrix& x, std::span<const double> y, Mode mode, const TrainConfig& cfg) {
  check_xy(x, y, mode);
  cfg.validate();
  const std::size_t n = x.rows(), p = x.cols();
  const double nn = static_cast<double>(n);
  std::vector<double> target(y.begin(), y.end());
  if (mode == Mode::classification)
    for (double& t : target) t = t == 1.0 ? 1.0 : -1.0;

  std::vector<double> beta(p, 0.0), avg_beta(p, 0.0), g(p);
  double b = mode == Mode::regression ? median(target) : 0.0;
  double avg_b = 0.0;
  const double reg = 1.0 / (cfg.C * nn);

  for (std::size_t t = 1; t <= cfg.margin_epochs; ++t) {
    for (std::size_t j = 0; j < p; ++j) g[j] = reg * beta[j];
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = x.row(i);
      double z = b;
      for (std::size_t j = 0; j < p; ++j) z += row[j] * beta[j];
      double dz = 0.0;
      if (mode == Mode::classification) {
        if (target[i] * z < 1.0) dz = -target[i] / nn;
      } else {
        const double r = target[i] - z;
        if (r > cfg.epsilon) dz = -1.0 / nn;
        else if (r < -cfg.epsilon) dz = 1.0 / nn;
      }
      if (dz == 0.0) continue;
      gb += dz;
      for (std::size_t j = 0; j < p; ++j) g[j] += dz * row[j];
    }
    const double eta = cfg.margin_step / std::sqrt(static_cast<double>(t));
    for (std::size_t j = 0; j < p; ++j) beta[j] -= eta * g[j];
    b -= eta * gb;
    // Running mean of the iterates.
    const double w = 1.0 / static_cast<double>(t);
    for (std::size_t j = 0; j < p; ++j) avg_beta[j] += w * (beta[j] - avg_beta[j]);
    avg_b += w * (b - avg_b);
    if (!std::isfinite(avg_b)) throw NumericalError("max-margin: non-finite iterate at epoch " + std::to_string(t));
  }

  ModelWeights m;
  m.kind = Kind::max_margin;
  m.mode = mode;
  m.coefficients = std::move(avg_beta);
  m.intercept = avg_b;
  m.hyperparameters = {{"C", cfg.C}, {"epsilon", cfg.epsilon}, {"epochs", static_cast<double>(cfg.margin_epochs)},
                       {"step", cfg.margin_step}};
  m.seed = cfg.seed;
  m.feature_count = p;
  return m;
}

ModelWeights fit_lda(const Matrix& x, std::span<const double> y, Mode mode) {
  check_xy(x, y, mode);
  const auto X = as_eigen(x);
  const auto n = X.rows();
  const auto p = X.cols();
  ModelWeights m;
  m.kind = Kind::lda;
  m.mode = mode;
  m.feature_count = static_cast<std::size_t>(p);

  if (mode == Mode::regression) {
    // Least squares with an intercept on centred data; minimum-norm when
    // columns are collinear or constant.
    const Eigen::RowVectorXd mu = X.colwise().mean();
    const Eigen::MatrixXd Xc = X.rowwise() - mu;
    Eigen::VectorXd Y = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
    const double ybar = Y.mean();
    Y.array() -= ybar;
    const Eigen::VectorXd w = Xc.completeOrthogonalDecomposition().solve(Y);
    if (!w.allFinite()) throw NumericalError("least squares produced non-finite coefficients");
    m.coefficients.assign(w.data(), w.data() + p);
    m.intercept = ybar - mu.dot(w);
    m.hyperparameters = {{"ridge", 0.0}};
    return m;
  }

  Eigen::RowVectorXd mu0 = Eigen::RowVectorXd::Zero(p), mu1 = Eigen::RowVectorXd::Zero(p);
  Eigen::Index n0 = 0, n1 = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y[static_cast<std::size_t>(i)] == 1.0) {
      mu1 += X.row(i);
      ++n1;
    } else {
      mu0 += X.row(i);
      ++n0;
    }
  }
  if (n0 == 0 || n1 == 0) throw DataError("LDA needs both classes present");
  mu0 /= static_cast<double>(n0);
  mu1 /= static_cast<double>(n1);
  Eigen::MatrixXd centered(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    centered.row(i) = X.row(i) - (y[static_cast<std::size_t>(i)] == 1.0 ? mu1 : mu0);
  constexpr double kRidge = 1e-6;
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
  cov.diagonal().array() += kRidge;
  const Eigen::VectorXd diff = (mu1 - mu0).transpose();
  if (diff.norm() == 0.0) throw DataError("LDA is degenerate: class means are identical");
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("LDA: within-class covariance is singular after ridge");
  const Eigen::VectorXd w = llt.solve(diff);
  if (!w.allFinite()) throw NumericalError("LDA produced non-finite coefficients");
  m.coefficients.assign(w.data(), w.data() + p);
  m.intercept = -0.5 * (mu0 + mu1).dot(w);
  m.hyperparameters = {{"ridge", kRidge}};
  return m;
}

}  // namespace manner::models
