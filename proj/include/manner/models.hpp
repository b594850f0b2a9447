#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "manner/matrix.hpp"

namespace manner::models {

enum class Kind { lasso, max_margin, lda, neural_net };
enum class Mode { classification, regression };

std::string to_string(Kind k);
std::string to_string(Mode m);
Kind parse_kind(const std::string& s);
Mode parse_mode(const std::string& s);
inline bool is_linear(Kind k) { return k != Kind::neural_net; }

struct TrainConfig {
  /// Unset means: choose by cross-validation over `lasso_grid`.
  std::optional<double> lasso_lambda;
  std::vector<double> lasso_grid = {1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::size_t cv_folds = 5;
  std::size_t lasso_max_iters = 3000;
  double lasso_tol = 1e-7;

  double C = 1.0;
  double epsilon = 0.1;
  std::size_t margin_epochs = 2000;
  double margin_step = 0.5;

  std::size_t nn_hidden = 16;
  std::size_t nn_epochs = 2000;
  double nn_learning_rate = 0.05;

  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Fully connected layer: out = weights * in + bias, weights is out x in.
struct DenseLayer {
  Matrix weights;
  std::vector<double> bias;
};

struct ModelWeights {
  Kind kind = Kind::lasso;
  Mode mode = Mode::classification;
  std::vector<double> coefficients;  // linear kinds
  double intercept = 0.0;
  std::vector<DenseLayer> layers;  // neural_net
  std::map<std::string, double> hyperparameters;
  std::uint64_t seed = 0;
  std::size_t feature_count = 0;
  std::uint64_t manifest_hash = 0;

  nlohmann::json to_json() const;
  static ModelWeights from_json(const nlohmann::json& j);
};

/// (1/N)||y - s(X b + c)||^2 + lambda ||b||_1 where s is the sigmoid in
/// classification mode and the identity in regression mode; y in {0, 1} for
/// classification. Proximal gradient with backtracking.
ModelWeights fit_lasso(const Matrix& x, std::span<const double> y, Mode mode, const TrainConfig& cfg);

/// Smallest lambda for which beta = 0 (with the intercept at its optimum) is
/// stationary.
double lasso_lambda_max(const Matrix& x, std::span<const double> y, Mode mode);

/// Hinge loss (labels {0, 1} mapped to -1/+1) or epsilon-insensitive loss,
/// plus (1/2C)||b||^2; averaged subgradient descent.
ModelWeights fit_max_margin(const Matrix& x, std::span<const double> y, Mode mode, const TrainConfig& cfg);

/// Fisher discriminant for classification; least squares for regression.
ModelWeights fit_lda(const Matrix& x, std::span<const double> y, Mode mode);

/// inputs -> 16 -> 16 -> 1, ReLU hidden units; sigmoid output with
/// cross-entropy (classification) or ReLU output with squared error
/// (regression). Full-batch gradient descent.
ModelWeights fit_neural_net(const Matrix& x, std::span<const double> y, Mode mode, const TrainConfig& cfg);

ModelWeights fit(Kind kind, const Matrix& x, std::span<const double> y, Mode mode, const TrainConfig& cfg);

std::vector<double> predict(const ModelWeights& model, const Matrix& x);

namespace net {

std::vector<DenseLayer> init(std::size_t inputs, std::size_t hidden, std::uint64_t seed);
std::vector<double> forward(const std::vector<DenseLayer>& layers, const Matrix& x, Mode mode);
double loss(const std::vector<DenseLayer>& layers, const Matrix& x, std::span<const double> y, Mode mode);
/// Analytic gradient of `loss`, same shapes as `layers`.
std::vector<DenseLayer> gradient(const std::vector<DenseLayer>& layers, const Matrix& x, std::span<const double> y,
                                 Mode mode);

}  // namespace net

/// Produces scores for `test_x` after training on (train_x, train_y).
using Scorer =
    std::function<std::vector<double>(const Matrix& train_x, std::span<const double> train_y, const Matrix& test_x)>;

Scorer lda_scorer();
Scorer lasso_scorer(double lambda);

struct EliminationResult {
  std::vector<std::size_t> selected;       // ascending column indices
  std::vector<std::size_t> removal_order;  // columns in the order removed
  std::vector<double> round_auc;           // CV AUC after each removal
};

/// Greedy backward elimination: each round drops the column whose removal
/// gives the best stratified k-fold AUC (ties to the lowest index) until
/// `target_count` columns remain. Labels are {0, 1}.
EliminationResult backward_eliminate(const Matrix& x, std::span<const double> labels, std::size_t target_count,
                                     const Scorer& scorer, std::size_t folds, std::uint64_t seed);

/// Stratified fold id per row; each class is shuffled then dealt round-robin.
std::vector<std::size_t> stratified_folds(std::span<const double> labels, std::size_t folds, std::uint64_t seed);

}  // namespace manner::models
