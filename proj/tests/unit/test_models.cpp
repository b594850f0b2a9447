#include <doctest.h>

#include <cmath>

#include "manner/error.hpp"
#include "manner/eval.hpp"
#include "manner/models.hpp"
#include "manner/rng.hpp"

using namespace manner;
using namespace manner::models;

namespace {

struct Data {
  Matrix x;
  std::vector<double> y;
};

Data linear_classes(std::size_t n, std::size_t p, std::uint64_t seed, double noise = 0.0) {
  Rng rng(seed);
  Data d{Matrix(n, p), std::vector<double>(n)};
  std::vector<double> w(p);
  for (double& v : w) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      d.x(i, j) = rng.normal();
      s += w[j] * d.x(i, j);
    }
    d.y[i] = s + noise * rng.normal() > 0.0 ? 1.0 : 0.0;
  }
  return d;
}

// Two-feature data with a clear gap around the line x0 + x1 = 0.
Data separable_2d(std::uint64_t seed) {
  Rng rng(seed);
  Data d;
  std::vector<double> vals;
  while (d.y.size() < 60) {
    const double a = rng.normal(), b = rng.normal();
    if (std::abs(a + b) < 0.4) continue;
    vals.push_back(a);
    vals.push_back(b);
    d.y.push_back(a + b > 0 ? 1.0 : 0.0);
  }
  d.x = Matrix(60, 2);
  d.x.values() = vals;
  return d;
}

std::size_t nonzeros(const ModelWeights& w) {
  std::size_t k = 0;
  for (double b : w.coefficients) k += std::abs(b) > 0.0;
  return k;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.lasso_lambda = 1e-3;
  return cfg;
}

double max_rel_err(const std::vector<DenseLayer>& a, const std::vector<DenseLayer>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    for (std::size_t i = 0; i < a[l].weights.size(); ++i) {
      const double d = a[l].weights.values()[i] - b[l].weights.values()[i];
      num += d * d;
      den += b[l].weights.values()[i] * b[l].weights.values()[i];
    }
    for (std::size_t i = 0; i < a[l].bias.size(); ++i) {
      const double d = a[l].bias[i] - b[l].bias[i];
      num += d * d;
      den += b[l].bias[i] * b[l].bias[i];
    }
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

std::vector<DenseLayer> numeric_gradient(std::vector<DenseLayer> layers, const Matrix& x, std::span<const double> y,
                                         Mode mode) {
  const double h = 1e-6;
  auto grad = layers;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t i = 0; i < layers[l].weights.size(); ++i) {
      double& w = layers[l].weights.values()[i];
      const double keep = w;
      w = keep + h;
      const double up = net::loss(layers, x, y, mode);
      w = keep - h;
      const double down = net::loss(layers, x, y, mode);
      w = keep;
      grad[l].weights.values()[i] = (up - down) / (2 * h);
    }
    for (std::size_t i = 0; i < layers[l].bias.size(); ++i) {
      double& b = layers[l].bias[i];
      const double keep = b;
      b = keep + h;
      const double up = net::loss(layers, x, y, mode);
      b = keep - h;
      const double down = net::loss(layers, x, y, mode);
      b = keep;
      grad[l].bias[i] = (up - down) / (2 * h);
    }
  }
  return grad;
}

void descend(std::vector<DenseLayer>& layers, const std::vector<DenseLayer>& g, double lr) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t i = 0; i < layers[l].weights.size(); ++i) layers[l].weights.values()[i] -= lr * g[l].weights.values()[i];
    for (std::size_t i = 0; i < layers[l].bias.size(); ++i) layers[l].bias[i] -= lr * g[l].bias[i];
  }
}

}  // namespace

TEST_SUITE("models") {
  TEST_CASE("kind and mode parsing") {
    CHECK(parse_kind("max_margin") == Kind::max_margin);
    CHECK(parse_mode("regression") == Mode::regression);
    CHECK_THROWS_AS(parse_kind("svm"), UsageError);
    CHECK_THROWS_AS(parse_mode("ranking"), UsageError);
    CHECK(to_string(Kind::neural_net) == "neural_net");
  }

  TEST_CASE("train config JSON") {
    TrainConfig cfg;
    cfg.lasso_lambda = 0.02;
    cfg.nn_hidden = 8;
    const auto back = TrainConfig::from_json(nlohmann::json::parse(cfg.to_json().dump()));
    CHECK(back.lasso_lambda == cfg.lasso_lambda);
    CHECK(back.nn_hidden == 8);
    CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"lamda", 0.1}}), UsageError);
    CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"C", -1.0}}), UsageError);
  }

  TEST_CASE("lasso: lambda_max zeroes the coefficients") {
    const auto d = linear_classes(80, 6, 1, 0.5);
    for (Mode mode : {Mode::classification, Mode::regression}) {
      const double lmax = lasso_lambda_max(d.x, d.y, mode);
      TrainConfig cfg;
      cfg.lasso_lambda = lmax * 1.0001;
      CHECK(nonzeros(fit_lasso(d.x, d.y, mode, cfg)) == 0);
      cfg.lasso_lambda = lmax * 0.5;
      CHECK(nonzeros(fit_lasso(d.x, d.y, mode, cfg)) > 0);
    }
  }

  TEST_CASE("lasso: separated 1-D data gives a positive slope") {
    Matrix x(4, 1);
    x.values() = {-1, -1, 1, 1};
    const std::vector<double> y = {0, 0, 1, 1};
    TrainConfig cfg;
    cfg.lasso_lambda = 1e-3;
    CHECK(fit_lasso(x, y, Mode::classification, cfg).coefficients[0] > 0.0);
  }

  TEST_CASE("lasso: regression recovers an exact slope") {
    Matrix x(6, 1);
    x.values() = {-1.5, -0.9, -0.3, 0.3, 0.9, 1.5};
    std::vector<double> y;
    for (double v : x.values()) y.push_back(2.0 * v);
    TrainConfig cfg;
    cfg.lasso_lambda = 1e-8;
    const auto w = fit_lasso(x, y, Mode::regression, cfg);
    CHECK(std::abs(w.coefficients[0] - 2.0) < 1e-3);
    CHECK(std::abs(w.intercept) < 1e-3);
  }

  TEST_CASE("lasso: sparsity is monotone in lambda") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto d = linear_classes(120, 25, seed, 1.0);
      std::size_t prev = SIZE_MAX;
      for (double lambda : {1e-3, 1e-2, 1e-1, 1.0}) {
        TrainConfig cfg;
        cfg.lasso_lambda = lambda;
        const auto k = nonzeros(fit_lasso(d.x, d.y, Mode::classification, cfg));
        CHECK(k <= prev);
        prev = k;
      }
    }
  }

  TEST_CASE("lasso: cross-validated lambda comes from the grid") {
    const auto d = linear_classes(100, 5, 4, 0.5);
    TrainConfig cfg;
    const auto w = fit_lasso(d.x, d.y, Mode::classification, cfg);
    const double chosen = w.hyperparameters.at("lambda");
    CHECK(std::find(cfg.lasso_grid.begin(), cfg.lasso_grid.end(), chosen) != cfg.lasso_grid.end());
  }

  TEST_CASE("max-margin examples") {
    TrainConfig cfg;
    cfg.C = 100.0;
    Matrix x(2, 1);
    x.values() = {-1, 1};
    const std::vector<double> y = {0, 1};
    const auto w = fit_max_margin(x, y, Mode::classification, cfg);
    const auto s = predict(w, x);
    CHECK(s[0] < 0.0);
    CHECK(s[1] > 0.0);

    // One point, two conflicting labels: the penalty pulls the slope to 0.
    Matrix same(2, 1, 1.0);
    const auto conflict = fit_max_margin(same, y, Mode::classification, TrainConfig{});
    CHECK(std::abs(conflict.coefficients[0]) < 0.05);

    Matrix xr(5, 2);
    Rng rng(3);
    for (double& v : xr.values()) v = rng.normal();
    const std::vector<double> yr = {3.0, 3.02, 2.97, 3.01, 2.99};
    const auto flat = fit_max_margin(xr, yr, Mode::regression, TrainConfig{});
    CHECK(flat.coefficients == std::vector<double>{0.0, 0.0});
  }

  TEST_CASE("LDA direction follows the class means") {
    Rng rng(21);
    const std::size_t n = 2000;
    Matrix x(n, 3);
    std::vector<double> y(n);
    const std::array<double, 3> mu1 = {1.0, -0.5, 0.25};
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i % 2 == 0 ? 1.0 : 0.0;
      for (std::size_t j = 0; j < 3; ++j) x(i, j) = rng.normal() + (y[i] == 1.0 ? mu1[j] : 0.0);
    }
    const auto w = fit_lda(x, y, Mode::classification);
    double dot = 0.0, nw = 0.0, nm = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      dot += w.coefficients[j] * mu1[j];
      nw += w.coefficients[j] * w.coefficients[j];
      nm += mu1[j] * mu1[j];
    }
    CHECK(dot / std::sqrt(nw * nm) >= 0.99);
  }

  TEST_CASE("LDA rejects identical class means and recovers exact regressions") {
    Matrix x(4, 1);
    x.values() = {-1, 1, -1, 1};
    const std::vector<double> y = {0, 0, 1, 1};
    CHECK_THROWS_AS(fit_lda(x, y, Mode::classification), DataError);
    const std::vector<double> one_class = {1, 1, 1, 1};
    CHECK_THROWS_AS(fit_lda(x, one_class, Mode::classification), DataError);

    Rng rng(6);
    Matrix xr(30, 3);
    std::vector<double> yr(30);
    for (std::size_t i = 0; i < 30; ++i) {
      for (std::size_t j = 0; j < 3; ++j) xr(i, j) = rng.normal();
      yr[i] = 0.5 + 1.5 * xr(i, 0) - 2.0 * xr(i, 1) + 0.25 * xr(i, 2);
    }
    const auto w = fit_lda(xr, yr, Mode::regression);
    CHECK(std::abs(w.coefficients[0] - 1.5) < 1e-6);
    CHECK(std::abs(w.coefficients[1] + 2.0) < 1e-6);
    CHECK(std::abs(w.coefficients[2] - 0.25) < 1e-6);
    CHECK(std::abs(w.intercept - 0.5) < 1e-6);
  }

  TEST_CASE("neural net gradients match central differences") {
    Rng rng(77);
    for (Mode mode : {Mode::classification, Mode::regression}) {
      for (int trial = 0; trial < 5; ++trial) {
        Matrix x(5, 4);
        for (double& v : x.values()) v = rng.normal();
        std::vector<double> y(5);
        for (double& v : y) v = mode == Mode::classification ? static_cast<double>(rng.below(2)) : rng.uniform(1, 7);
        auto layers = net::init(4, 6, 100 + static_cast<std::uint64_t>(trial));
        if (mode == Mode::regression) layers[2].bias[0] = 4.0;  // keep the output unit active
        CHECK(max_rel_err(net::gradient(layers, x, y, mode), numeric_gradient(layers, x, y, mode)) <= 1e-3);
        for (int step = 0; step < 10; ++step) descend(layers, net::gradient(layers, x, y, mode), 0.01);
        CHECK(max_rel_err(net::gradient(layers, x, y, mode), numeric_gradient(layers, x, y, mode)) <= 1e-3);
      }
    }
  }

  TEST_CASE("neural net on constant labels") {
    Rng rng(9);
    Matrix x(20, 3);
    for (double& v : x.values()) v = rng.normal();
    const std::vector<double> y(20, 1.0);
    auto layers = net::init(3, 16, 1);
    double prev = net::loss(layers, x, y, Mode::classification);
    for (int step = 0; step < 200; ++step) {
      descend(layers, net::gradient(layers, x, y, Mode::classification), 0.01);
      const double cur = net::loss(layers, x, y, Mode::classification);
      CHECK(cur <= prev);
      prev = cur;
    }
    const auto w = fit_neural_net(x, y, Mode::classification, TrainConfig{});
    for (double s : predict(w, x)) CHECK(s >= 0.9);
  }

  TEST_CASE("neural net separates XOR") {
    Matrix x(4, 2);
    x.values() = {-1, -1, -1, 1, 1, -1, 1, 1};
    const std::vector<double> y = {0, 1, 1, 0};
    TrainConfig cfg;
    cfg.nn_epochs = 5000;
    cfg.nn_learning_rate = 0.1;
    const auto s = predict(fit_neural_net(x, y, Mode::classification, cfg), x);
    for (std::size_t i = 0; i < 4; ++i) CHECK((s[i] >= 0.5) == (y[i] == 1.0));
  }

  TEST_CASE("predict conventions") {
    ModelWeights lasso;
    lasso.kind = Kind::lasso;
    lasso.coefficients = {0.0, 0.0};
    lasso.feature_count = 2;
    Matrix x(3, 2, 1.5);
    CHECK(predict(lasso, x) == std::vector<double>(3, 0.5));
    ModelWeights mm = lasso;
    mm.kind = Kind::max_margin;
    CHECK(predict(mm, x) == std::vector<double>(3, 0.0));
    CHECK_THROWS_AS(predict(mm, Matrix(3, 3)), DataError);

    const auto d = linear_classes(50, 4, 2, 0.3);
    const auto w = fit_lasso(d.x, d.y, Mode::classification, quick_config());
    const auto fwd = predict(w, d.x);
    std::vector<std::size_t> rev(50);
    for (std::size_t i = 0; i < 50; ++i) rev[i] = 49 - i;
    const auto back = predict(w, d.x.select_rows(rev));
    for (std::size_t i = 0; i < 50; ++i) CHECK(back[i] == fwd[49 - i]);
  }

  TEST_CASE("linear predictions ignore an appended zero column") {
    const auto d = linear_classes(80, 4, 13, 0.5);
    Matrix wide(80, 5);
    for (std::size_t i = 0; i < 80; ++i)
      for (std::size_t j = 0; j < 4; ++j) wide(i, j) = d.x(i, j);
    for (Kind k : {Kind::lasso, Kind::max_margin, Kind::lda}) {
      const auto a = predict(fit(k, d.x, d.y, Mode::classification, quick_config()), d.x);
      const auto b = predict(fit(k, wide, d.y, Mode::classification, quick_config()), wide);
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-6));
    }
  }

  TEST_CASE("every kind reaches training AUC 1 on separable data") {
    const auto d = separable_2d(5);
    for (Kind k : {Kind::lasso, Kind::max_margin, Kind::lda, Kind::neural_net}) {
      CAPTURE(to_string(k));
      const auto s = predict(fit(k, d.x, d.y, Mode::classification, quick_config()), d.x);
      CHECK(eval::auc(s, d.y) == 1.0);
    }
  }

  TEST_CASE("fits are deterministic and serialize losslessly") {
    const auto d = linear_classes(60, 3, 8, 0.5);
    TrainConfig cfg = quick_config();
    cfg.seed = 42;
    for (Kind k : {Kind::lasso, Kind::max_margin, Kind::lda, Kind::neural_net}) {
      for (Mode mode : {Mode::classification, Mode::regression}) {
        const auto a = fit(k, d.x, d.y, mode, cfg);
        const auto b = fit(k, d.x, d.y, mode, cfg);
        CHECK(a.to_json().dump() == b.to_json().dump());
        const auto back = ModelWeights::from_json(nlohmann::json::parse(a.to_json().dump()));
        CHECK(predict(back, d.x) == predict(a, d.x));
      }
    }
    CHECK_THROWS_AS(ModelWeights::from_json(nlohmann::json{{"kind", "lasso"}}), DataError);
  }

  TEST_CASE("stratified folds balance both classes") {
    std::vector<double> y(53);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 3 == 0 ? 1.0 : 0.0;
    const auto folds = stratified_folds(y, 5, 1);
    std::array<int, 5> pos{}, all{};
    for (std::size_t i = 0; i < y.size(); ++i) {
      pos[folds[i]] += y[i] == 1.0;
      ++all[folds[i]];
    }
    CHECK(*std::max_element(pos.begin(), pos.end()) - *std::min_element(pos.begin(), pos.end()) <= 1);
    CHECK(*std::max_element(all.begin(), all.end()) - *std::min_element(all.begin(), all.end()) <= 1);
    CHECK(stratified_folds(y, 5, 1) == folds);
  }

  TEST_CASE("backward elimination drops a planted noise column first") {
    int hits = 0;
    const int seeds = 20;
    for (int seed = 0; seed < seeds; ++seed) {
      Rng rng(1000 + static_cast<std::uint64_t>(seed));
      const std::size_t n = 120, noise_col = static_cast<std::size_t>(seed % 4);
      Matrix x(n, 4);
      std::vector<double> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
          x(i, j) = rng.normal();
          if (j != noise_col) s += x(i, j);
        }
        y[i] = s + 0.5 * rng.normal() > 0 ? 1.0 : 0.0;
      }
      const auto r = backward_eliminate(x, y, 3, lda_scorer(), 5, static_cast<std::uint64_t>(seed));
      hits += r.removal_order.front() == noise_col;
      if (seed == 0) {
        const auto again = backward_eliminate(x, y, 3, lda_scorer(), 5, 0);
        CHECK(again.removal_order == r.removal_order);
        CHECK(r.selected.size() == 3);
        CHECK_THROWS_AS(backward_eliminate(x, y, 4, lda_scorer(), 5, 0), UsageError);
      }
    }
    CHECK(hits >= 0.9 * seeds);
  }
}
