#include <algorithm>
#include <cmath>
#include <numeric>

#include "manner/error.hpp"
#include "manner/models.hpp"
#include "manner/rng.hpp"

namespace manner::models {

namespace net {

namespace {

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

void affine(const DenseLayer& layer, std::span<const double> in, std::vector<double>& out) {
  const std::size_t rows = layer.weights.rows();
  out.assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = layer.bias[r];
    const auto w = layer.weights.row(r);
    for (std::size_t c = 0; c < w.size(); ++c) s += w[c] * in[c];
    out[r] = s;
  }
}

void check_shapes(const std::vector<DenseLayer>& layers, const Matrix& x) {
  if (layers.size() != 3) throw DataError("network must have 3 layers");
  if (layers[0].weights.cols() != x.cols())
    throw DataError("network expects " + std::to_string(layers[0].weights.cols()) + " inputs, got " +
                    std::to_string(x.cols()));
}

// Pre-activations of the three layers for one sample.
struct Activations {
  std::vector<double> a1, h1, a2, h2, out;
};

void run(const std::vector<DenseLayer>& layers, std::span<const double> in, Activations& act) {
  affine(layers[0], in, act.a1);
  act.h1 = act.a1;
  for (double& v : act.h1) v = std::max(0.0, v);
  affine(layers[1], act.h1, act.a2);
  act.h2 = act.a2;
  for (double& v : act.h2) v = std::max(0.0, v);
  affine(layers[2], act.h2, act.out);
}

}  // namespace

std::vector<DenseLayer> init(std::size_t inputs, std::size_t hidden, std::uint64_t seed) {
  Rng rng(seed);
  // Hidden biases start slightly positive: with zero biases a sample whose
  // first-layer units are all inactive would sit exactly on the ReLU kink of
  // the second layer.
  auto make = [&rng](std::size_t out, std::size_t in, double bias) {
    DenseLayer l{Matrix(out, in), std::vector<double>(out, bias)};
    const double limit = std::sqrt(6.0 / static_cast<double>(in));
    for (double& w : l.weights.values()) w = rng.uniform(-limit, limit);
    return l;
  };
  std::vector<DenseLayer> layers;
  layers.push_back(make(hidden, inputs, 0.01));
  layers.push_back(make(hidden, hidden, 0.01));
  layers.push_back(make(1, hidden, 0.0));
  return layers;
}

std::vector<double> forward(const std::vector<DenseLayer>& layers, const Matrix& x, Mode mode) {
  check_shapes(layers, x);
  std::vector<double> out(x.rows());
  Activations act;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    run(layers, x.row(i), act);
    const double o = act.out[0];
    out[i] = mode == Mode::classification ? sigmoid(o) : std::max(0.0, o);
  }
  return out;
}

double loss(const std::vector<DenseLayer>& layers, const Matrix& x, std::span<const double> y, Mode mode) {
  check_shapes(layers, x);
  Activations act;
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    run(layers, x.row(i), act);
    const double o = act.out[0];
    if (mode == Mode::classification) {
      s += softplus(o) - y[i] * o;
    } else {
      const double r = std::max(0.0, o) - y[i];
      s += r * r;
    }
  }
  return s / static_cast<double>(x.rows());
}

std::vector<DenseLayer> gradient(const std::vector<DenseLayer>& layers, const Matrix& x, std::span<const double> y,
                                 Mode mode) {
  check_shapes(layers, x);
  std::vector<DenseLayer> g;
  for (const auto& l : layers)
    g.push_back({Matrix(l.weights.rows(), l.weights.cols()), std::vector<double>(l.bias.size(), 0.0)});
  const double n = static_cast<double>(x.rows());
  const std::size_t h1 = layers[0].bias.size(), h2 = layers[1].bias.size();
  std::vector<double> d2(h2), d1(h1);
  Activations act;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto in = x.row(i);
    run(layers, in, act);
    const double o = act.out[0];
    double d_out;
    if (mode == Mode::classification) {
      d_out = (sigmoid(o) - y[i]) / n;
    } else {
      d_out = o > 0.0 ? 2.0 / n * (o - y[i]) : 0.0;
    }
    if (d_out == 0.0) continue;

    for (std::size_t k = 0; k < h2; ++k) g[2].weights(0, k) += d_out * act.h2[k];
    g[2].bias[0] += d_out;

    for (std::size_t k = 0; k < h2; ++k) d2[k] = act.a2[k] > 0.0 ? d_out * layers[2].weights(0, k) : 0.0;
    for (std::size_t k = 0; k < h2; ++k) {
      if (d2[k] == 0.0) continue;
      for (std::size_t j = 0; j < h1; ++j) g[1].weights(k, j) += d2[k] * act.h1[j];
      g[1].bias[k] += d2[k];
    }

    for (std::size_t j = 0; j < h1; ++j) {
      double s = 0.0;
      if (act.a1[j] > 0.0)
        for (std::size_t k = 0; k < h2; ++k) s += d2[k] * layers[1].weights(k, j);
      d1[j] = s;
    }
    for (std::size_t j = 0; j < h1; ++j) {
      if (d1[j] == 0.0) continue;
      auto row = g[0].weights.row(j);
      for (std::size_t c = 0; c < in.size(); ++c) row[c] += d1[j] * in[c];
      g[0].bias[j] += d1[j];
    }
  }
  return g;
}

}  // namespace net

ModelWeights fit_neural_net(const Matrix& x, std::span<const double> y, Mode mode, const TrainConfig& cfg) {
  cfg.validate();
  if (x.rows() != y.size()) throw DataError("feature rows and targets differ in length");
  if (x.rows() == 0) throw DataError("empty training matrix");
  if (mode == Mode::classification)
    for (double v : y)
      if (v != 0.0 && v != 1.0) throw DataError("classification targets must be 0 or 1");

  auto layers = net::init(x.cols(), cfg.nn_hidden, cfg.seed);
  // A ReLU output starting below zero would never receive gradient.
  if (mode == Mode::regression)
    layers[2].bias[0] = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());

  const double lr = cfg.nn_learning_rate;
  for (std::size_t epoch = 1; epoch <= cfg.nn_epochs; ++epoch) {
    const auto g = net::gradient(layers, x, y, mode);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& w = layers[l].weights.values();
      const auto& gw = g[l].weights.values();
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * gw[k];
      for (std::size_t k = 0; k < layers[l].bias.size(); ++k) layers[l].bias[k] -= lr * g[l].bias[k];
    }
    if (epoch % 100 == 0 || epoch == cfg.nn_epochs) {
      const double l = net::loss(layers, x, y, mode);
      if (!std::isfinite(l)) throw NumericalError("neural net: non-finite loss at epoch " + std::to_string(epoch));
    }
  }

  ModelWeights m;
  m.kind = Kind::neural_net;
  m.mode = mode;
  m.layers = std::move(layers);
  m.hyperparameters = {{"hidden", static_cast<double>(cfg.nn_hidden)},
                       {"epochs", static_cast<double>(cfg.nn_epochs)},
                       {"learning_rate", cfg.nn_learning_rate}};
  m.seed = cfg.seed;
  m.feature_count = x.cols();
  return m;
}

}  // namespace manner::models
