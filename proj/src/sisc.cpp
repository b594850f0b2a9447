#include "manner/sisc.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "manner/error.hpp"
#include "manner/io_util.hpp"
#include "manner/rng.hpp"
#include "manner/sisc_kernels.hpp"

namespace manner::sisc {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxHalvings = 60;

void check_dims(const signal::MultichannelSignal& f, const PatternDictionary& dict, const ActivationSet& acts) {
  dict.validate_shape();
  if (acts.count() != dict.count())
    throw DataError("activation count " + std::to_string(acts.count()) + " != pattern count " +
                    std::to_string(dict.count()));
  if (acts.length() != f.length())
    throw DataError("activation length " + std::to_string(acts.length()) + " != signal length " +
                    std::to_string(f.length()));
  if (dict.channels() != f.channels())
    throw DataError("pattern channels " + std::to_string(dict.channels()) + " != signal channels " +
                    std::to_string(f.channels()));
}

double half_sq_residual(const Matrix& f, const Matrix& model, Matrix* residual = nullptr) {
  const auto& a = f.values();
  const auto& b = model.values();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = a[i] - b[i];
    if (residual) residual->values()[i] = r;
    s += r * r;
  }
  return 0.5 * s;
}

double l1(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += std::abs(v);
  return s;
}

double sq_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

void PatternDictionary::validate_shape() const {
  if (patterns.empty()) throw DataError("dictionary has no patterns");
  const auto m = patterns.front().rows();
  const auto c = patterns.front().cols();
  if (m == 0 || c == 0) throw DataError("dictionary patterns are empty");
  for (const auto& p : patterns)
    if (p.rows() != m || p.cols() != c) throw DataError("dictionary patterns differ in shape");
}

std::size_t SolverConfig::pattern_length(double sample_rate_hz) const {
  return static_cast<std::size_t>(std::llround(pattern_seconds * sample_rate_hz));
}

void SolverConfig::validate(double sample_rate_hz) const {
  if (num_patterns < 1) throw DataError("solver: num_patterns must be >= 1");
  if (!(pattern_seconds > 0.0)) throw DataError("solver: pattern_seconds must be positive");
  if (!(pattern_seconds * sample_rate_hz >= 2.0))
    throw DataError("solver: pattern_seconds * sample_rate_hz must be >= 2");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DataError("solver: lambda must be positive");
  if (max_iters < 1) throw DataError("solver: max_iters must be >= 1");
  if (!(rel_tol > 0.0)) throw DataError("solver: rel_tol must be positive");
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return std::sqrt(s);
}

Matrix reconstruct(const PatternDictionary& dict, const ActivationSet& acts, std::size_t n) {
  dict.validate_shape();
  if (acts.count() != dict.count()) throw DataError("reconstruct: activation/pattern count mismatch");
  if (acts.length() != n) throw DataError("reconstruct: activation length does not match N");
  Matrix out(n, dict.channels());
  kernels::omp::reconstruct(dict.patterns, acts.trains, out);
  return out;
}

double objective(const signal::MultichannelSignal& f, const PatternDictionary& dict, const ActivationSet& acts,
                 double lambda) {
  check_dims(f, dict, acts);
  const Matrix model = reconstruct(dict, acts, f.length());
  return half_sq_residual(f.samples(), model) + lambda * l1(acts.trains);
}

std::vector<Matrix> grad_psi(const signal::MultichannelSignal& f, const PatternDictionary& dict,
                             const ActivationSet& acts) {
  check_dims(f, dict, acts);
  const Matrix model = reconstruct(dict, acts, f.length());
  Matrix residual(f.length(), f.channels());
  half_sq_residual(f.samples(), model, &residual);
  std::vector<Matrix> grad(dict.count(), Matrix(dict.length(), dict.channels()));
  kernels::omp::grad_psi(residual, acts.trains, grad);
  return grad;
}

Matrix grad_alpha(const signal::MultichannelSignal& f, const PatternDictionary& dict, const ActivationSet& acts) {
  check_dims(f, dict, acts);
  const Matrix model = reconstruct(dict, acts, f.length());
  Matrix residual(f.length(), f.channels());
  half_sq_residual(f.samples(), model, &residual);
  Matrix grad(dict.count(), f.length());
  kernels::omp::grad_alpha(residual, dict.patterns, grad);
  return grad;
}

ActivationSet shrink(const ActivationSet& acts, double threshold) {
  if (!(threshold >= 0.0)) throw DataError("shrink: threshold must be nonnegative");
  ActivationSet out = acts;
  for (double& v : out.trains.values()) {
    const double mag = std::max(0.0, std::abs(v) - threshold);
    v = v > 0.0 ? mag : (v < 0.0 ? -mag : 0.0);
  }
  return out;
}

PatternDictionary project_dictionary(const PatternDictionary& dict) {
  PatternDictionary out = dict;
  for (auto& p : out.patterns) {
    const double norm = frobenius_norm(p);
    if (norm > 1.0)
      for (double& v : p.values()) v /= norm;
  }
  return out;
}

ActivationSet project_activations(const ActivationSet& acts) {
  ActivationSet out = acts;
  for (double& v : out.trains.values()) v = std::max(0.0, v);
  return out;
}

FitResult fit(const signal::MultichannelSignal& f, const SolverConfig& cfg) {
  const double rate = f.sample_rate_hz();
  cfg.validate(rate);
  const std::size_t n_len = f.length();
  const std::size_t chans = f.channels();
  const std::size_t len = cfg.pattern_length(rate);
  const std::size_t num = cfg.num_patterns;
  if (n_len <= len)
    throw DataError("signal length " + std::to_string(n_len) + " must exceed pattern length " + std::to_string(len));
  // Activations at k > N - M would place a pattern past the end of the signal.
  const std::size_t valid = n_len - len + 1;

  Rng rng(cfg.seed);
  PatternDictionary dict;
  dict.sample_rate_hz = rate;
  for (std::size_t d = 0; d < num; ++d) {
    Matrix p(len, chans);
    for (double& v : p.values()) v = rng.uniform(-0.5, 0.5);
    dict.patterns.push_back(std::move(p));
  }
  dict = project_dictionary(dict);
  ActivationSet acts{Matrix(num, n_len)};

  const Matrix& target = f.samples();
  Matrix model(n_len, chans);
  Matrix residual(n_len, chans);
  kernels::omp::reconstruct(dict.patterns, acts.trains, model);
  double smooth = half_sq_residual(target, model, &residual);
  double penalty = cfg.lambda * l1(acts.trains);

  SolveTrace trace;
  trace.objective.push_back(smooth + penalty);

  std::vector<Matrix> g_psi(num, Matrix(len, chans));
  Matrix g_alpha(num, n_len);
  Matrix trial_model(n_len, chans);
  double step_psi = 0.5;  // doubled before first use, so the first try is 1
  double step_alpha = 0.5;

  auto non_finite = [](std::size_t it, const char* what) {
    return NumericalError("solver produced a non-finite " + std::string(what) + " at iteration " +
                          std::to_string(it));
  };

  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    const double before = smooth + penalty;

    // Pattern step: projected gradient on the residual term.
    kernels::omp::grad_psi(residual, acts.trains, g_psi);
    {
      double step = std::min(1.0, 2.0 * step_psi);
      for (int h = 0; h < kMaxHalvings; ++h, step *= 0.5) {
        PatternDictionary cand = dict;
        for (std::size_t d = 0; d < num; ++d) {
          auto& pv = cand.patterns[d].values();
          const auto& gv = g_psi[d].values();
          for (std::size_t i = 0; i < pv.size(); ++i) pv[i] -= step * gv[i];
        }
        cand = project_dictionary(cand);
        double moved = 0.0;
        for (std::size_t d = 0; d < num; ++d) moved += sq_distance(cand.patterns[d].values(), dict.patterns[d].values());
        if (moved == 0.0) break;
        kernels::omp::reconstruct(cand.patterns, acts.trains, trial_model);
        const double cand_smooth = half_sq_residual(target, trial_model);
        if (!std::isfinite(cand_smooth)) throw non_finite(it, "pattern update");
        if (cand_smooth <= smooth - kArmijo / step * moved) {
          dict = std::move(cand);
          std::swap(model, trial_model);
          smooth = half_sq_residual(target, model, &residual);
          step_psi = step;
          break;
        }
      }
    }

    // Activation step: gradient, shrinkage, then nonnegativity.
    kernels::omp::grad_alpha(residual, dict.patterns, g_alpha);
    {
      double step = std::min(1.0, 2.0 * step_alpha);
      for (int h = 0; h < kMaxHalvings; ++h, step *= 0.5) {
        ActivationSet cand = acts;
        for (std::size_t d = 0; d < num; ++d)
          for (std::size_t k = 0; k < n_len; ++k)
            cand.trains(d, k) = k < valid ? cand.trains(d, k) - step * g_alpha(d, k) : 0.0;
        cand = project_activations(shrink(cand, step * cfg.lambda));
        const double moved = sq_distance(cand.trains.values(), acts.trains.values());
        if (moved == 0.0) break;
        kernels::omp::reconstruct(dict.patterns, cand.trains, trial_model);
        const double cand_smooth = half_sq_residual(target, trial_model);
        const double cand_penalty = cfg.lambda * l1(cand.trains);
        if (!std::isfinite(cand_smooth + cand_penalty)) throw non_finite(it, "activation update");
        if (cand_smooth + cand_penalty <= smooth + penalty - kArmijo / step * moved) {
          acts = std::move(cand);
          std::swap(model, trial_model);
          smooth = half_sq_residual(target, model, &residual);
          penalty = cand_penalty;
          step_alpha = step;
          break;
        }
      }
    }

    const double after = smooth + penalty;
    if (!std::isfinite(after)) throw non_finite(it, "objective");
    trace.objective.push_back(after);
    trace.iterations = it;
    const double decrease = before - after;
    if (before <= 0.0 || decrease <= cfg.rel_tol * before) {
      trace.converged = true;
      break;
    }
  }
  trace.final_objective = trace.objective.back();
  return {std::move(dict), std::move(acts), std::move(trace)};
}

std::vector<PatternOccurrence> extract_occurrences(const ActivationSet& acts, std::size_t pattern_length,
                                                   double min_amplitude_frac, double sample_rate_hz) {
  if (!(min_amplitude_frac > 0.0 && min_amplitude_frac <= 1.0))
    throw DataError("min_amplitude_frac must be in (0, 1]");
  if (!(sample_rate_hz > 0.0)) throw DataError("sample rate must be positive");
  const std::size_t n_len = acts.length();
  const double merge_dist = static_cast<double>(pattern_length) / 2.0;
  std::vector<PatternOccurrence> out;

  for (std::size_t d = 0; d < acts.count(); ++d) {
    const auto train = acts.trains.row(d);
    const double peak = *std::max_element(train.begin(), train.end());
    if (!(peak > 0.0)) continue;
    const double threshold = min_amplitude_frac * peak;
    const std::size_t last = n_len >= pattern_length ? n_len - pattern_length : 0;

    std::vector<std::size_t> cand;
    for (std::size_t k = 0; k <= last && k < n_len; ++k) {
      const double v = train[k];
      if (!(v > 0.0) || v < threshold) continue;
      const bool left_ok = k == 0 || v >= train[k - 1];
      const bool right_ok = k + 1 >= n_len || v > train[k + 1];
      if (left_ok && right_ok) cand.push_back(k);
    }
    // Keep the largest peaks first; ties go to the earlier index.
    std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) { return train[a] > train[b]; });
    std::vector<std::size_t> kept;
    for (auto k : cand) {
      const bool clash = std::any_of(kept.begin(), kept.end(), [&](std::size_t q) {
        const double dist = k > q ? static_cast<double>(k - q) : static_cast<double>(q - k);
        return dist < merge_dist;
      });
      if (!clash) kept.push_back(k);
    }
    std::sort(kept.begin(), kept.end());
    for (auto k : kept)
      out.push_back({static_cast<int>(d), k, static_cast<double>(k) / sample_rate_hz, train[k]});
  }
  return out;
}

nlohmann::json to_json(const FitResult& result) {
  const auto& dict = result.dictionary;
  nlohmann::json j;
  j["format"] = "sisc-fit/1";
  j["sample_rate_hz"] = dict.sample_rate_hz;
  j["num_patterns"] = dict.count();
  j["pattern_length"] = dict.length();
  j["channels"] = dict.channels();
  j["signal_length"] = result.activations.length();
  auto pats = nlohmann::json::array();
  for (const auto& p : dict.patterns) pats.push_back(p.values());
  j["patterns"] = std::move(pats);
  auto acts = nlohmann::json::array();
  for (std::size_t d = 0; d < result.activations.count(); ++d) {
    auto sparse = nlohmann::json::array();
    const auto row = result.activations.trains.row(d);
    for (std::size_t k = 0; k < row.size(); ++k)
      if (row[k] != 0.0) sparse.push_back(nlohmann::json::array({k, row[k]}));
    acts.push_back(std::move(sparse));
  }
  j["activations"] = std::move(acts);
  j["trace"] = {{"objective", result.trace.objective},
                {"final_objective", result.trace.final_objective},
                {"iterations", result.trace.iterations},
                {"converged", result.trace.converged}};
  return j;
}

FitResult fit_result_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "sisc-fit/1") throw DataError("unsupported fit format");
    FitResult r;
    const auto num = j.at("num_patterns").get<std::size_t>();
    const auto len = j.at("pattern_length").get<std::size_t>();
    const auto chans = j.at("channels").get<std::size_t>();
    const auto n_len = j.at("signal_length").get<std::size_t>();
    r.dictionary.sample_rate_hz = j.at("sample_rate_hz").get<double>();
    const auto& pats = j.at("patterns");
    if (pats.size() != num) throw DataError("pattern count mismatch in fit JSON");
    for (const auto& p : pats) {
      Matrix m(len, chans);
      auto vals = p.get<std::vector<double>>();
      if (vals.size() != len * chans) throw DataError("pattern size mismatch in fit JSON");
      m.values() = std::move(vals);
      r.dictionary.patterns.push_back(std::move(m));
    }
    r.activations.trains = Matrix(num, n_len);
    const auto& acts = j.at("activations");
    if (acts.size() != num) throw DataError("activation count mismatch in fit JSON");
    for (std::size_t d = 0; d < num; ++d)
      for (const auto& kv : acts[d]) {
        const auto k = kv.at(0).get<std::size_t>();
        if (k >= n_len) throw DataError("activation index out of range in fit JSON");
        r.activations.trains(d, k) = kv.at(1).get<double>();
      }
    const auto& t = j.at("trace");
    r.trace.objective = t.at("objective").get<std::vector<double>>();
    r.trace.final_objective = t.at("final_objective").get<double>();
    r.trace.iterations = t.at("iterations").get<std::size_t>();
    r.trace.converged = t.at("converged").get<bool>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed fit JSON: ") + e.what());
  }
}

std::string occurrences_csv(const std::string& video_id, const std::vector<PatternOccurrence>& occ) {
  std::ostringstream ss;
  ss << "video_id,pattern_id,start_s,amplitude\n";
  for (const auto& o : occ)
    ss << video_id << ',' << o.pattern_id << ',' << io::format_double(o.start_s) << ','
       << io::format_double(o.amplitude) << '\n';
  return ss.str();
}

std::vector<PatternOccurrence> parse_occurrences_csv(const std::filesystem::path& path, double sample_rate_hz) {
  const auto lines = io::read_lines(path);
  std::vector<PatternOccurrence> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    const auto where = io::location(path, i + 1);
    const auto f = io::split(lines[i], ',');
    if (f.size() != 4) throw DataError(where + ": expected video_id,pattern_id,start_s,amplitude");
    PatternOccurrence o;
    o.pattern_id = static_cast<int>(io::parse_int(f[1], where));
    o.start_s = io::parse_double(f[2], where);
    o.amplitude = io::parse_double(f[3], where);
    o.start_index = static_cast<std::size_t>(std::llround(o.start_s * sample_rate_hz));
    out.push_back(o);
  }
  return out;
}

}  // namespace manner::sisc
