#include <doctest.h>

#include <cmath>
#include <omp.h>

#include "manner/error.hpp"
#include "manner/rng.hpp"
#include "manner/sisc.hpp"
#include "manner/sisc_kernels.hpp"
#include "manner/synth.hpp"
#include "test_util.hpp"

using namespace manner;
using namespace manner::sisc;

namespace {

signal::MultichannelSignal make_signal(const Matrix& m, double rate = 1.0) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < m.cols(); ++c) names.push_back("c" + std::to_string(c));
  return signal::MultichannelSignal(m, rate, names);
}

PatternDictionary dict_1d(std::vector<double> psi) {
  PatternDictionary d;
  Matrix p(psi.size(), 1);
  for (std::size_t i = 0; i < psi.size(); ++i) p(i, 0) = psi[i];
  d.patterns.push_back(p);
  return d;
}

ActivationSet acts_1d(std::vector<double> a) {
  ActivationSet s;
  s.trains = Matrix(1, a.size());
  for (std::size_t i = 0; i < a.size(); ++i) s.trains(0, i) = a[i];
  return s;
}

struct Instance {
  Matrix f;
  PatternDictionary dict;
  ActivationSet acts;
};

Instance random_instance(Rng& rng, std::size_t n, std::size_t c, std::size_t d, std::size_t m) {
  Instance in;
  in.f = Matrix(n, c);
  for (double& v : in.f.values()) v = rng.normal();
  for (std::size_t i = 0; i < d; ++i) {
    Matrix p(m, c);
    for (double& v : p.values()) v = rng.uniform(-0.5, 0.5);
    in.dict.patterns.push_back(p);
  }
  in.acts.trains = Matrix(d, n);
  for (double& v : in.acts.trains.values()) v = rng.uniform() < 0.3 ? rng.uniform(0.1, 2.0) : 0.0;
  return in;
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

}  // namespace

TEST_SUITE("sisc") {
  TEST_CASE("reconstruct examples") {
    auto out = reconstruct(dict_1d({1, 2}), acts_1d({0, 0, 0, 1, 0, 0}), 6);
    CHECK(out.values() == std::vector<double>{0, 0, 0, 1, 2, 0});
    out = reconstruct(dict_1d({1, 2}), acts_1d({0, 0, 0, 0, 0, 0}), 6);
    CHECK(out.values() == std::vector<double>(6, 0.0));
    out = reconstruct(dict_1d({1, 2}), acts_1d({2, 0, 0, 0}), 4);
    CHECK(out.values() == std::vector<double>{2, 4, 0, 0});
    CHECK_THROWS_AS(reconstruct(dict_1d({1, 2}), acts_1d({1, 0}), 3), DataError);
  }

  TEST_CASE("reconstruct is linear in the activations") {
    Rng rng(5);
    auto a = random_instance(rng, 25, 2, 2, 4);
    auto b = random_instance(rng, 25, 2, 2, 4);
    ActivationSet sum;
    sum.trains = a.acts.trains;
    for (std::size_t i = 0; i < sum.trains.size(); ++i) sum.trains.values()[i] += b.acts.trains.values()[i];
    const auto ra = reconstruct(a.dict, a.acts, 25);
    const auto rb = reconstruct(a.dict, b.acts, 25);
    const auto rs = reconstruct(a.dict, sum, 25);
    for (std::size_t i = 0; i < rs.size(); ++i) CHECK(rs.values()[i] == doctest::Approx(ra.values()[i] + rb.values()[i]).epsilon(1e-12));
  }

  TEST_CASE("objective examples") {
    Rng rng(3);
    auto in = random_instance(rng, 12, 2, 2, 3);
    const auto exact = make_signal(reconstruct(in.dict, in.acts, 12));
    CHECK(objective(exact, in.dict, in.acts, 0.0) == doctest::Approx(0.0));

    const auto zero = make_signal(Matrix(12, 2));
    ActivationSet z;
    z.trains = Matrix(2, 12);
    CHECK(objective(zero, in.dict, z, 3.0) == 0.0);

    Matrix one(1, 1, 1.0);
    CHECK(objective(make_signal(one), dict_1d({0.5}), acts_1d({0.0}), 1.0) == doctest::Approx(0.5));
  }

  TEST_CASE("gradients match central differences on random instances") {
    Rng rng(2024);
    const double h = 1e-6;
    for (int trial = 0; trial < 25; ++trial) {
      const std::size_t n = 8 + rng.below(23), c = 1 + rng.below(3), d = 1 + rng.below(2), m = 2 + rng.below(3);
      auto in = random_instance(rng, n, c, d, m);
      const auto f = make_signal(in.f);

      const auto gp = grad_psi(f, in.dict, in.acts);
      std::vector<double> analytic, numeric;
      for (std::size_t k = 0; k < d; ++k)
        for (std::size_t i = 0; i < gp[k].size(); ++i) {
          auto plus = in.dict, minus = in.dict;
          plus.patterns[k].values()[i] += h;
          minus.patterns[k].values()[i] -= h;
          numeric.push_back((objective(f, plus, in.acts, 0.0) - objective(f, minus, in.acts, 0.0)) / (2 * h));
          analytic.push_back(gp[k].values()[i]);
        }
      CHECK(rel_err(analytic, numeric) <= 1e-4);

      const auto ga = grad_alpha(f, in.dict, in.acts);
      analytic.clear();
      numeric.clear();
      for (std::size_t i = 0; i < ga.size(); ++i) {
        auto plus = in.acts, minus = in.acts;
        plus.trains.values()[i] += h;
        minus.trains.values()[i] -= h;
        numeric.push_back((objective(f, in.dict, plus, 0.0) - objective(f, in.dict, minus, 0.0)) / (2 * h));
        analytic.push_back(ga.values()[i]);
      }
      CHECK(rel_err(analytic, numeric) <= 1e-4);
    }
  }

  TEST_CASE("gradients vanish at an exact fit and scale with the residual") {
    Rng rng(8);
    auto in = random_instance(rng, 20, 2, 2, 3);
    const auto model = reconstruct(in.dict, in.acts, 20);
    const auto exact = make_signal(model);
    for (const auto& g : grad_psi(exact, in.dict, in.acts))
      for (double v : g.values()) CHECK(std::abs(v) < 1e-12);
    const auto ga = grad_alpha(exact, in.dict, in.acts);
    for (double v : ga.values()) CHECK(std::abs(v) < 1e-12);

    // f = model + r and f = model + 2r: gradients double.
    Matrix f1 = model, f2 = model;
    for (std::size_t i = 0; i < model.size(); ++i) {
      const double r = rng.normal();
      f1.values()[i] += r;
      f2.values()[i] += 2 * r;
    }
    const auto g1 = grad_alpha(make_signal(f1), in.dict, in.acts);
    const auto g2 = grad_alpha(make_signal(f2), in.dict, in.acts);
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2.values()[i] == doctest::Approx(2 * g1.values()[i]).epsilon(1e-9));
    const auto p1 = grad_psi(make_signal(f1), in.dict, in.acts);
    const auto p2 = grad_psi(make_signal(f2), in.dict, in.acts);
    for (std::size_t i = 0; i < p1[0].size(); ++i)
      CHECK(p2[0].values()[i] == doctest::Approx(2 * p1[0].values()[i]).epsilon(1e-9));
  }

  TEST_CASE("grad_alpha peaks at the impulse for a unit pattern") {
    // f = 0, psi = [1, 0], impulse 1 at n = 2: residual is -1 at n = 2 only.
    const auto f = make_signal(Matrix(5, 1));
    const auto g = grad_alpha(f, dict_1d({1, 0}), acts_1d({0, 0, 1, 0, 0}));
    CHECK(g.values() == std::vector<double>{0, 0, 1, 0, 0});
  }

  TEST_CASE("shrink and projections") {
    auto s = shrink(acts_1d({0.5, -0.1, 0.3}), 0.2);
    CHECK(s.trains(0, 0) == doctest::Approx(0.3));
    CHECK(s.trains(0, 1) == 0.0);
    CHECK(s.trains(0, 2) == doctest::Approx(0.1));
    CHECK(shrink(acts_1d({0.5, -0.1}), 0.0).trains.values() == std::vector<double>{0.5, -0.1});
    CHECK(shrink(acts_1d({0.05}), 0.2).trains(0, 0) == 0.0);
    CHECK_THROWS_AS(shrink(acts_1d({1.0}), -0.1), DataError);

    CHECK(project_activations(acts_1d({-1, 0, 2})).trains.values() == std::vector<double>{0, 0, 2});
    CHECK(project_activations(acts_1d({1, 0, 2})).trains.values() == std::vector<double>{1, 0, 2});
    CHECK(project_activations(acts_1d({-1, -3})).trains.values() == std::vector<double>{0, 0});

    auto big = project_dictionary(dict_1d({0, 2}));
    CHECK(big.patterns[0](1, 0) == doctest::Approx(1.0));
    CHECK(frobenius_norm(big.patterns[0]) == doctest::Approx(1.0));
    CHECK(project_dictionary(dict_1d({0.3, 0.4})).patterns[0].values() == std::vector<double>{0.3, 0.4});
    CHECK(project_dictionary(dict_1d({0, 0})).patterns[0].values() == std::vector<double>{0, 0});
  }

  TEST_CASE("shrink and nonnegativity projection commute") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> v(10);
      for (double& x : v) x = rng.normal();
      const double t = rng.uniform(0.0, 1.5);
      const auto a = shrink(project_activations(acts_1d(v)), t);
      const auto b = project_activations(shrink(acts_1d(v), t));
      CHECK(a.trains == b.trains);
    }
  }

  TEST_CASE("parallel kernels agree with the serial reference") {
    Rng rng(99);
    auto in = random_instance(rng, 500, 4, 3, 17);
    Matrix ref(500, 4), par(500, 4);
    kernels::serial::reconstruct(in.dict.patterns, in.acts.trains, ref);
    kernels::omp::reconstruct(in.dict.patterns, in.acts.trains, par);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(par.values()[i] == doctest::Approx(ref.values()[i]).epsilon(1e-12));

    std::vector<Matrix> gs(3, Matrix(17, 4)), go(3, Matrix(17, 4));
    kernels::serial::grad_psi(in.f, in.acts.trains, gs);
    kernels::omp::grad_psi(in.f, in.acts.trains, go);
    for (std::size_t d = 0; d < 3; ++d)
      for (std::size_t i = 0; i < gs[d].size(); ++i)
        CHECK(go[d].values()[i] == doctest::Approx(gs[d].values()[i]).epsilon(1e-12));

    Matrix as(3, 500), ao(3, 500);
    kernels::serial::grad_alpha(in.f, in.dict.patterns, as);
    kernels::omp::grad_alpha(in.f, in.dict.patterns, ao);
    for (std::size_t i = 0; i < as.size(); ++i) CHECK(ao.values()[i] == doctest::Approx(as.values()[i]).epsilon(1e-12));
  }

  TEST_CASE("parallel kernels do not depend on the thread count") {
    Rng rng(100);
    auto in = random_instance(rng, 400, 3, 2, 11);
    auto run = [&](int threads) {
      omp_set_num_threads(threads);
      Matrix out(400, 3), ga(2, 400);
      std::vector<Matrix> gp(2, Matrix(11, 3));
      kernels::omp::reconstruct(in.dict.patterns, in.acts.trains, out);
      kernels::omp::grad_psi(in.f, in.acts.trains, gp);
      kernels::omp::grad_alpha(in.f, in.dict.patterns, ga);
      return std::make_tuple(out, gp, ga);
    };
    const int before = omp_get_max_threads();
    const auto one = run(1);
    const auto four = run(4);
    omp_set_num_threads(before);
    CHECK(std::get<0>(one) == std::get<0>(four));
    CHECK(std::get<1>(one) == std::get<1>(four));
    CHECK(std::get<2>(one) == std::get<2>(four));
  }

  TEST_CASE("fit on a zero signal returns zero activations") {
    SolverConfig cfg;
    cfg.num_patterns = 2;
    cfg.pattern_seconds = 5;
    cfg.lambda = 0.1;
    const auto r = fit(make_signal(Matrix(60, 2)), cfg);
    for (double v : r.activations.trains.values()) CHECK(v == 0.0);
    CHECK(r.trace.final_objective == 0.0);
  }

  TEST_CASE("fit invariants on a planted fixture") {
    synth::SiscParams p;
    p.length = 600;
    p.channels = 3;
    p.pattern_length = 20;
    p.occurrences_per_pattern = 5;
    p.sample_rate_hz = 20.0;
    const auto fx = synth::make_sisc(p, 12);
    SolverConfig cfg;
    cfg.num_patterns = 2;
    cfg.pattern_seconds = 1.0;
    cfg.lambda = 0.05;
    cfg.max_iters = 150;
    cfg.seed = 12;
    const auto r = fit(fx.signal, cfg);

    REQUIRE(r.trace.objective.size() == r.trace.iterations + 1);
    for (std::size_t i = 1; i < r.trace.objective.size(); ++i) CHECK(r.trace.objective[i] <= r.trace.objective[i - 1]);
    for (const auto& psi : r.dictionary.patterns) CHECK(frobenius_norm(psi) <= 1.0 + 1e-9);
    for (double v : r.activations.trains.values()) CHECK(v >= 0.0);
    for (std::size_t d = 0; d < 2; ++d)
      for (std::size_t k = p.length - p.pattern_length + 1; k < p.length; ++k) CHECK(r.activations.trains(d, k) == 0.0);
    CHECK(r.trace.final_objective == r.trace.objective.back());

    const auto again = fit(fx.signal, cfg);
    CHECK(again.trace.objective == r.trace.objective);
    CHECK(again.activations.trains == r.activations.trains);

    // A penalty above ||f||^2 leaves nothing worth activating.
    double energy = 0.0;
    for (double v : fx.signal.samples().values()) energy += v * v;
    cfg.lambda = energy;
    const auto dead = fit(fx.signal, cfg);
    for (double v : dead.activations.trains.values()) CHECK(v == 0.0);
  }

  TEST_CASE("fit rejects signals no longer than the pattern") {
    SolverConfig cfg;
    cfg.pattern_seconds = 10;
    cfg.lambda = 0.1;
    CHECK_THROWS_AS(fit(make_signal(Matrix(10, 1, 1.0)), cfg), DataError);
    cfg.lambda = 0.0;
    CHECK_THROWS_AS(fit(make_signal(Matrix(40, 1, 1.0)), cfg), DataError);
  }

  TEST_CASE("extract_occurrences examples") {
    auto occ = extract_occurrences(acts_1d({0, 0, 5, 0, 0, 3, 0}), 2, 0.1, 1.0);
    REQUIRE(occ.size() == 2);
    CHECK(occ[0].start_index == 2);
    CHECK(occ[1].start_index == 5);
    CHECK(occ[1].amplitude == 3.0);

    // Peaks one sample apart with M = 4 merge into the larger one.
    occ = extract_occurrences(acts_1d({0, 5, 4, 0, 0, 0, 0, 0}), 4, 0.1, 1.0);
    REQUIRE(occ.size() == 1);
    CHECK(occ[0].start_index == 1);

    occ = extract_occurrences(acts_1d({0, 5, 0, 0.4, 0}), 2, 0.1, 1.0);
    REQUIRE(occ.size() == 1);
    CHECK(occ[0].start_index == 1);

    CHECK(extract_occurrences(acts_1d({0, 0, 0}), 2, 0.1, 1.0).empty());
    CHECK_THROWS_AS(extract_occurrences(acts_1d({0, 1}), 1, 0.0, 1.0), DataError);
  }

  TEST_CASE("occurrence start seconds follow the sample rate") {
    const auto occ = extract_occurrences(acts_1d({0, 0, 0, 2, 0, 0, 0, 0}), 2, 0.5, 30.0);
    REQUIRE(occ.size() == 1);
    CHECK(occ[0].start_s == doctest::Approx(0.1));
  }

  TEST_CASE("fit JSON and occurrence CSV round trips") {
    Rng rng(31);
    auto in = random_instance(rng, 30, 2, 2, 4);
    FitResult r;
    r.dictionary = in.dict;
    r.dictionary.sample_rate_hz = 30.0;
    r.activations = in.acts;
    r.trace.objective = {3.0, 2.0};
    r.trace.final_objective = 2.0;
    r.trace.iterations = 1;
    const auto back = fit_result_from_json(nlohmann::json::parse(to_json(r).dump()));
    CHECK(back.activations.trains == r.activations.trains);
    CHECK(back.dictionary.patterns == r.dictionary.patterns);
    CHECK(back.dictionary.sample_rate_hz == 30.0);

    const auto occ = extract_occurrences(in.acts, 4, 0.1, 30.0);
    testutil::TempDir dir("occ");
    testutil::write_text(dir / "o.csv", occurrences_csv("v1", occ));
    const auto parsed = parse_occurrences_csv(dir / "o.csv", 30.0);
    REQUIRE(parsed.size() == occ.size());
    for (std::size_t i = 0; i < occ.size(); ++i) {
      CHECK(parsed[i].pattern_id == occ[i].pattern_id);
      CHECK(parsed[i].start_index == occ[i].start_index);
      CHECK(parsed[i].amplitude == occ[i].amplitude);
    }
  }

  TEST_CASE("synthetic fixture without noise is the exact planted model") {
    synth::SiscParams p;
    p.noise_sd = 0.0;
    const auto fx = synth::make_sisc(p, 3);
    CHECK(reconstruct(fx.dictionary, fx.activations, p.length) == fx.signal.samples());
    for (const auto& psi : fx.dictionary.patterns) CHECK(frobenius_norm(psi) == doctest::Approx(1.0));
    CHECK(synth::shift_aligned_ncc(fx.dictionary.patterns[0], fx.dictionary.patterns[0]) == doctest::Approx(1.0));
  }
}
