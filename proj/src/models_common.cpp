#include <algorithm>
#include <cmath>
#include <exception>

#include "manner/error.hpp"
#include "manner/eval.hpp"
#include "manner/models.hpp"
#include "manner/rng.hpp"

namespace manner::models {

using nlohmann::json;

std::string to_string(Kind k) {
  switch (k) {
    case Kind::lasso: return "lasso";
    case Kind::max_margin: return "max_margin";
    case Kind::lda: return "lda";
    case Kind::neural_net: return "neural_net";
  }
  return "unknown";
}

std::string to_string(Mode m) { return m == Mode::classification ? "classification" : "regression"; }

Kind parse_kind(const std::string& s) {
  if (s == "lasso") return Kind::lasso;
  if (s == "max_margin") return Kind::max_margin;
  if (s == "lda") return Kind::lda;
  if (s == "neural_net") return Kind::neural_net;
  throw UsageError("unknown model kind '" + s + "' (expected lasso, max_margin, lda or neural_net)");
}

Mode parse_mode(const std::string& s) {
  if (s == "classification") return Mode::classification;
  if (s == "regression") return Mode::regression;
  throw UsageError("unknown mode '" + s + "' (expected classification or regression)");
}

void TrainConfig::validate() const {
  if (lasso_lambda && !(*lasso_lambda > 0.0 && std::isfinite(*lasso_lambda)))
    throw UsageError("train.lasso_lambda must be a positive finite number");
  if (!lasso_lambda) {
    if (lasso_grid.empty()) throw UsageError("train.lasso_grid must not be empty");
    for (double g : lasso_grid)
      if (!(g > 0.0 && std::isfinite(g))) throw UsageError("train.lasso_grid entries must be positive");
    if (cv_folds < 2) throw UsageError("train.cv_folds must be at least 2");
  }
  if (lasso_max_iters == 0) throw UsageError("train.lasso_max_iters must be positive");
  if (!(lasso_tol > 0.0)) throw UsageError("train.lasso_tol must be positive");
  if (!(C > 0.0 && std::isfinite(C))) throw UsageError("train.C must be positive");
  if (!(epsilon >= 0.0 && std::isfinite(epsilon))) throw UsageError("train.epsilon must be non-negative");
  if (margin_epochs == 0) throw UsageError("train.margin_epochs must be positive");
  if (!(margin_step > 0.0)) throw UsageError("train.margin_step must be positive");
  if (nn_hidden == 0) throw UsageError("train.nn_hidden must be positive");
  if (nn_epochs == 0) throw UsageError("train.nn_epochs must be positive");
  if (!(nn_learning_rate > 0.0 && std::isfinite(nn_learning_rate)))
    throw UsageError("train.nn_learning_rate must be positive");
}

json TrainConfig::to_json() const {
  json j = {{"lasso_grid", lasso_grid},
            {"cv_folds", cv_folds},
            {"lasso_max_iters", lasso_max_iters},
            {"lasso_tol", lasso_tol},
            {"C", C},
            {"epsilon", epsilon},
            {"margin_epochs", margin_epochs},
            {"margin_step", margin_step},
            {"nn_hidden", nn_hidden},
            {"nn_epochs", nn_epochs},
            {"nn_learning_rate", nn_learning_rate},
            {"seed", seed}};
  j["lasso_lambda"] = lasso_lambda ? json(*lasso_lambda) : json(nullptr);
  return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw UsageError("train config must be a JSON object");
  static const std::vector<std::string> known = {"lasso_lambda", "lasso_grid",      "cv_folds",  "lasso_max_iters",
                                                 "lasso_tol",    "C",               "epsilon",   "margin_epochs",
                                                 "margin_step",  "nn_hidden",       "nn_epochs", "nn_learning_rate",
                                                 "seed"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw UsageError("unknown train option '" + key + "'");
  TrainConfig c;
  try {
    if (j.contains("lasso_lambda") && !j["lasso_lambda"].is_null()) c.lasso_lambda = j["lasso_lambda"].get<double>();
    if (j.contains("lasso_grid")) c.lasso_grid = j["lasso_grid"].get<std::vector<double>>();
    if (j.contains("cv_folds")) c.cv_folds = j["cv_folds"].get<std::size_t>();
    if (j.contains("lasso_max_iters")) c.lasso_max_iters = j["lasso_max_iters"].get<std::size_t>();
    if (j.contains("lasso_tol")) c.lasso_tol = j["lasso_tol"].get<double>();
    if (j.contains("C")) c.C = j["C"].get<double>();
    if (j.contains("epsilon")) c.epsilon = j["epsilon"].get<double>();
    if (j.contains("margin_epochs")) c.margin_epochs = j["margin_epochs"].get<std::size_t>();
    if (j.contains("margin_step")) c.margin_step = j["margin_step"].get<double>();
    if (j.contains("nn_hidden")) c.nn_hidden = j["nn_hidden"].get<std::size_t>();
    if (j.contains("nn_epochs")) c.nn_epochs = j["nn_epochs"].get<std::size_t>();
    if (j.contains("nn_learning_rate")) c.nn_learning_rate = j["nn_learning_rate"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

json layer_to_json(const DenseLayer& l) {
  return {{"rows", l.weights.rows()}, {"cols", l.weights.cols()}, {"weights", l.weights.values()}, {"bias", l.bias}};
}

DenseLayer layer_from_json(const json& j) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  const auto w = j.at("weights").get<std::vector<double>>();
  auto bias = j.at("bias").get<std::vector<double>>();
  if (w.size() != rows * cols || bias.size() != rows) throw DataError("model file: layer shape mismatch");
  DenseLayer l{Matrix(rows, cols), std::move(bias)};
  std::copy(w.begin(), w.end(), l.weights.values().begin());
  return l;
}

}  // namespace

json ModelWeights::to_json() const {
  json j = {{"format", "manner-model/1"},
            {"kind", models::to_string(kind)},
            {"mode", models::to_string(mode)},
            {"intercept", intercept},
            {"coefficients", coefficients},
            {"hyperparameters", hyperparameters},
            {"seed", seed},
            {"feature_count", feature_count},
            {"manifest_hash", manifest_hash}};
  json ls = json::array();
  for (const auto& l : layers) ls.push_back(layer_to_json(l));
  j["layers"] = ls;
  return j;
}

ModelWeights ModelWeights::from_json(const json& j) {
  try {
    if (j.value("format", "") != "manner-model/1") throw DataError("not a model file (format tag missing)");
    ModelWeights m;
    m.kind = parse_kind(j.at("kind").get<std::string>());
    m.mode = parse_mode(j.at("mode").get<std::string>());
    m.intercept = j.at("intercept").get<double>();
    m.coefficients = j.at("coefficients").get<std::vector<double>>();
    m.hyperparameters = j.at("hyperparameters").get<std::map<std::string, double>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.feature_count = j.at("feature_count").get<std::size_t>();
    m.manifest_hash = j.at("manifest_hash").get<std::uint64_t>();
    for (const auto& l : j.at("layers")) m.layers.push_back(layer_from_json(l));
    if (is_linear(m.kind) && m.coefficients.size() != m.feature_count)
      throw DataError("model file: coefficient count does not match feature_count");
    if (m.kind == Kind::neural_net && (m.layers.size() != 3 || m.layers[0].weights.cols() != m.feature_count))
      throw DataError("model file: network shape does not match feature_count");
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("model file: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
}

ModelWeights fit(Kind kind, const Matrix& x, std::span<const double> y, Mode mode, const TrainConfig& cfg) {
  switch (kind) {
    case Kind::lasso: return fit_lasso(x, y, mode, cfg);
    case Kind::max_margin: return fit_max_margin(x, y, mode, cfg);
    case Kind::lda: return fit_lda(x, y, mode);
    case Kind::neural_net: return fit_neural_net(x, y, mode, cfg);
  }
  throw UsageError("unknown model kind");
}

std::vector<double> predict(const ModelWeights& model, const Matrix& x) {
  if (x.cols() != model.feature_count)
    throw DataError("model expects " + std::to_string(model.feature_count) + " features, got " +
                    std::to_string(x.cols()));
  if (model.kind == Kind::neural_net) return net::forward(model.layers, x, model.mode);

  std::vector<double> z(x.rows(), model.intercept);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) z[i] += row[j] * model.coefficients[j];
  }
  if (model.kind == Kind::lasso && model.mode == Mode::classification)
    for (double& v : z) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return z;
}

Scorer lda_scorer() {
  return [](const Matrix& tx, std::span<const double> ty, const Matrix& sx) {
    return predict(fit_lda(tx, ty, Mode::classification), sx);
  };
}

Scorer lasso_scorer(double lambda) {
  return [lambda](const Matrix& tx, std::span<const double> ty, const Matrix& sx) {
    TrainConfig cfg;
    cfg.lasso_lambda = lambda;
    return predict(fit_lasso(tx, ty, Mode::classification, cfg), sx);
  };
}

std::vector<std::size_t> stratified_folds(std::span<const double> labels, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw UsageError("need at least 2 folds");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1.0 ? pos : neg).push_back(i);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(pos));
  rng.shuffle(std::span<std::size_t>(neg));
  std::vector<std::size_t> fold(labels.size());
  for (std::size_t k = 0; k < pos.size(); ++k) fold[pos[k]] = k % folds;
  // Continue the deal where the positives stopped so fold sizes stay balanced.
  for (std::size_t k = 0; k < neg.size(); ++k) fold[neg[k]] = (pos.size() + k) % folds;
  return fold;
}

namespace {

double cv_auc(const Matrix& x, std::span<const double> labels, const std::vector<std::size_t>& fold, std::size_t folds,
              const Scorer& scorer) {
  double total = 0.0;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < labels.size(); ++i) (fold[i] == f ? te : tr).push_back(i);
    std::vector<double> ytr, yte;
    for (auto i : tr) ytr.push_back(labels[i]);
    for (auto i : te) yte.push_back(labels[i]);
    const auto scores = scorer(x.select_rows(tr), ytr, x.select_rows(te));
    total += eval::auc(scores, yte);
  }
  return total / static_cast<double>(folds);
}

}  // namespace

EliminationResult backward_eliminate(const Matrix& x, std::span<const double> labels, std::size_t target_count,
                                     const Scorer& scorer, std::size_t folds, std::uint64_t seed) {
  if (x.rows() != labels.size()) throw DataError("feature rows and labels differ in length");
  if (target_count == 0 || target_count >= x.cols())
    throw UsageError("elimination target must be at least 1 and below the column count");
  const auto npos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1.0));
  if (npos < folds || labels.size() - npos < folds)
    throw DataError("backward elimination needs at least " + std::to_string(folds) + " rows of each class");
  const auto fold = stratified_folds(labels, folds, seed);

  EliminationResult res;
  std::vector<std::size_t> active(x.cols());
  for (std::size_t j = 0; j < active.size(); ++j) active[j] = j;

  while (active.size() > target_count) {
    const std::size_t m = active.size();
    std::vector<double> score(m, 0.0);
    std::vector<std::exception_ptr> errors(m);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t c = 0; c < m; ++c) {
      try {
        std::vector<std::size_t> keep;
        keep.reserve(m - 1);
        for (std::size_t k = 0; k < m; ++k)
          if (k != c) keep.push_back(active[k]);
        score[c] = cv_auc(x.select_cols(keep), labels, fold, folds, scorer);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
    // active is ascending, so the first maximum is the lowest column index.
    const auto best = static_cast<std::size_t>(std::max_element(score.begin(), score.end()) - score.begin());
    res.removal_order.push_back(active[best]);
    res.round_auc.push_back(score[best]);
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(best));
  }
  res.selected = active;
  return res;
}

}  // namespace manner::models
