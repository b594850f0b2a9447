#include "manner/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "manner/error.hpp"
#include "manner/eval.hpp"
#include "manner/io_util.hpp"
#include "manner/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace manner::pipeline {

namespace {

// Stage tags mixed into the master seed.
constexpr std::uint64_t kExtractStage = 1;
constexpr std::uint64_t kSelectionStage = 2;
constexpr std::uint64_t kTrainStage = 3;
constexpr std::uint64_t kEvalStage = 4;

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw UsageError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw UsageError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, _] : obj.items())
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw UsageError("unknown key '" + key + "' in " + where);
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw DataError(what + ": file not found: " + p.string());
}

json read_json(const fs::path& p) {
  try {
    return json::parse(io::read_file(p));
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": invalid JSON: " + e.what());
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

fs::path extract_dir(const PipelineConfig& cfg) { return cfg.output_dir / "extract"; }
fs::path features_dir(const PipelineConfig& cfg) { return cfg.output_dir / "features"; }

template <class F>
void parallel_for_each(std::size_t n, F&& body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

fs::path PipelineConfig::features_path() const {
  return features ? *features : output_dir / "features" / "features.csv";
}

PipelineConfig parse_config(json doc, const fs::path& base_dir, const std::vector<std::string>& overrides) {
  if (!doc.is_object()) throw UsageError("config must be a JSON object");
  for (const auto& o : overrides) apply_override(doc, o);
  reject_unknown(doc,
                 {"seed", "output_dir", "videos", "lexicon", "annotations", "features", "face_map", "joint_layout",
                  "solver", "train", "eval"},
                 "config");
  PipelineConfig cfg;
  try {
    cfg.seed = doc.value("seed", std::uint64_t{0});
    cfg.output_dir = resolve(base_dir, doc.value("output_dir", std::string("out")));
    for (const auto& v : doc.value("videos", json::array())) {
      reject_unknown(v, {"id", "signal", "transcript", "prosody", "face"}, "videos[]");
      VideoPaths vp;
      vp.id = v.at("id").get<std::string>();
      if (vp.id.empty() || vp.id.find(',') != std::string::npos || vp.id.find('/') != std::string::npos)
        throw UsageError("video id '" + vp.id + "' must be non-empty without ',' or '/'");
      vp.signal = resolve(base_dir, v.at("signal").get<std::string>());
      vp.transcript = resolve(base_dir, v.at("transcript").get<std::string>());
      vp.prosody = resolve(base_dir, v.at("prosody").get<std::string>());
      vp.face = resolve(base_dir, v.at("face").get<std::string>());
      cfg.videos.push_back(std::move(vp));
    }
    std::vector<std::string> ids;
    for (const auto& v : cfg.videos) ids.push_back(v.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw UsageError("duplicate video id in config");

    if (doc.contains("lexicon")) cfg.lexicon = resolve(base_dir, doc["lexicon"].get<std::string>());
    if (doc.contains("annotations")) cfg.annotations = resolve(base_dir, doc["annotations"].get<std::string>());
    if (doc.contains("features")) cfg.features = resolve(base_dir, doc["features"].get<std::string>());
    if (doc.contains("face_map")) cfg.face_map = features::FaceMap::from_json(doc["face_map"]);
    if (doc.contains("joint_layout")) {
      const auto& jl = doc["joint_layout"];
      reject_unknown(jl, {"joint_names", "reference_joint", "tracked_joints"}, "joint_layout");
      cfg.joint_layout.joint_names = jl.at("joint_names").get<std::vector<std::string>>();
      cfg.joint_layout.reference_joint = jl.at("reference_joint").get<std::size_t>();
      cfg.joint_layout.tracked_joints = jl.at("tracked_joints").get<std::vector<std::size_t>>();
      cfg.joint_layout.validate();
      if (cfg.joint_layout.tracked_joints.size() != 8)
        throw UsageError("joint_layout must track exactly 8 joints (the body feature family has 40 columns)");
    }

    const json solver = doc.value("solver", json::object());
    reject_unknown(solver, {"num_patterns", "pattern_seconds", "lambda", "max_iters", "rel_tol", "min_amplitude_frac"},
                   "solver");
    cfg.solver.num_patterns = solver.value("num_patterns", cfg.solver.num_patterns);
    cfg.solver.pattern_seconds = solver.value("pattern_seconds", cfg.solver.pattern_seconds);
    cfg.solver.lambda = solver.value("lambda", cfg.solver.lambda);
    cfg.solver.max_iters = solver.value("max_iters", cfg.solver.max_iters);
    cfg.solver.rel_tol = solver.value("rel_tol", cfg.solver.rel_tol);
    cfg.min_amplitude_frac = solver.value("min_amplitude_frac", cfg.min_amplitude_frac);
    if (!(cfg.min_amplitude_frac > 0.0 && cfg.min_amplitude_frac <= 1.0))
      throw UsageError("solver.min_amplitude_frac must lie in (0, 1]");

    cfg.train = models::TrainConfig::from_json(doc.value("train", json::object()));

    const json ev = doc.value("eval", json::object());
    reject_unknown(ev, {"n_repeats", "test_fraction", "subsample_fraction", "models", "modes"}, "eval");
    cfg.eval.n_repeats = ev.value("n_repeats", cfg.eval.n_repeats);
    cfg.eval.test_fraction = ev.value("test_fraction", cfg.eval.test_fraction);
    cfg.eval.subsample_fraction = ev.value("subsample_fraction", cfg.eval.subsample_fraction);
    if (ev.contains("models")) {
      cfg.eval.models.clear();
      for (const auto& m : ev["models"]) cfg.eval.models.push_back(models::parse_kind(m.get<std::string>()));
    }
    if (ev.contains("modes")) {
      cfg.eval.modes.clear();
      for (const auto& m : ev["modes"]) cfg.eval.modes.push_back(models::parse_mode(m.get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const DataError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (cfg.eval.n_repeats == 0) throw UsageError("eval.n_repeats must be positive");
  if (!(cfg.eval.test_fraction > 0.0 && cfg.eval.test_fraction < 1.0))
    throw UsageError("eval.test_fraction must lie in (0, 1)");
  if (!(cfg.eval.subsample_fraction > 0.0 && cfg.eval.subsample_fraction <= 1.0))
    throw UsageError("eval.subsample_fraction must lie in (0, 1]");
  if (cfg.eval.models.empty() || cfg.eval.modes.empty()) throw UsageError("eval.models and eval.modes must be non-empty");
  return cfg;
}

PipelineConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  if (!fs::is_regular_file(path)) throw UsageError("config file not found: " + path.string());
  json doc;
  try {
    doc = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_config(std::move(doc), path.parent_path(), overrides);
}

std::uint64_t extract_seed(const PipelineConfig& cfg, std::size_t video_index) {
  return derive_seed(derive_seed(cfg.seed, kExtractStage), video_index);
}
std::uint64_t selection_seed(const PipelineConfig& cfg) { return derive_seed(cfg.seed, kSelectionStage); }
std::uint64_t train_seed(const PipelineConfig& cfg) { return derive_seed(cfg.seed, kTrainStage); }
std::uint64_t eval_seed(const PipelineConfig& cfg) { return derive_seed(cfg.seed, kEvalStage); }

// ---------------------------------------------------------------- extract

void cmd_extract(const PipelineConfig& cfg, std::ostream& log) {
  if (cfg.videos.empty()) throw UsageError("config lists no videos");
  if (cfg.solver.lambda <= 0.0) throw UsageError("solver.lambda must be set to a positive value");
  for (const auto& v : cfg.videos) require_file(v.signal, "video " + v.id + " signal");

  std::vector<std::string> summaries(cfg.videos.size());
  parallel_for_each(cfg.videos.size(), [&](std::size_t i) {
    const auto& v = cfg.videos[i];
    try {
      const auto sig = signal::load_signal(v.signal);
      sisc::SolverConfig sc = cfg.solver;
      sc.seed = extract_seed(cfg, i);
      const auto result = sisc::fit(sig, sc);
      const auto occ = sisc::extract_occurrences(result.activations, result.dictionary.length(),
                                                 cfg.min_amplitude_frac, sig.sample_rate_hz());
      io::write_file_atomic(extract_dir(cfg) / (v.id + ".model.json"), dump(sisc::to_json(result)));
      io::write_file_atomic(extract_dir(cfg) / (v.id + ".occurrences.csv"), sisc::occurrences_csv(v.id, occ));
      std::ostringstream s;
      s << "extract: " << v.id << ": " << result.dictionary.count() << " patterns, " << occ.size()
        << " occurrences, objective " << result.trace.final_objective << " after " << result.trace.iterations
        << " iterations";
      if (!result.trace.converged) s << " (iteration cap reached)";
      summaries[i] = s.str();
    } catch (const NumericalError& e) {
      throw NumericalError("video " + v.id + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("video " + v.id + ": " + e.what());
    }
  });
  for (const auto& s : summaries) log << s << '\n';
}

// ---------------------------------------------------------------- features

namespace {

struct LoadedVideo {
  signal::MultichannelSignal skeleton;
  signal::AlignedTranscript transcript;
  signal::ProsodyTrack prosody;
  signal::FaceTrack face;
  std::size_t num_patterns = 0;
  std::size_t pattern_length = 0;
  std::vector<sisc::PatternOccurrence> occurrences;
};

LoadedVideo load_video(const PipelineConfig& cfg, const VideoPaths& v) {
  const auto model_path = extract_dir(cfg) / (v.id + ".model.json");
  const auto occ_path = extract_dir(cfg) / (v.id + ".occurrences.csv");
  require_file(model_path, "video " + v.id + " pattern model (run extract first)");
  require_file(occ_path, "video " + v.id + " occurrences (run extract first)");
  const auto fit = sisc::fit_result_from_json(read_json(model_path));
  LoadedVideo lv{signal::load_signal(v.signal), signal::load_transcript(v.transcript), signal::load_prosody(v.prosody),
                 signal::load_face(v.face), 0, 0, {}};
  if (lv.skeleton.sample_rate_hz() != fit.dictionary.sample_rate_hz)
    throw DataError("video " + v.id + ": signal rate differs from the extracted model");
  lv.num_patterns = fit.dictionary.count();
  lv.pattern_length = fit.dictionary.length();
  lv.occurrences = sisc::parse_occurrences_csv(occ_path, lv.skeleton.sample_rate_hz());
  return lv;
}

std::vector<features::Window> windows_for(const LoadedVideo& lv, int pattern) {
  const double span = static_cast<double>(lv.pattern_length) / lv.skeleton.sample_rate_hz();
  std::vector<features::Window> w;
  for (const auto& o : lv.occurrences)
    if (o.pattern_id == pattern) w.push_back({o.start_s, o.start_s + span});
  return w;
}

// Chooses 23 lexicon categories by backward elimination on the lexical
// columns against binarized crowd ratings.
signal::CategoryLexicon select_lexicon(const PipelineConfig& cfg, const signal::CategoryLexicon& lex,
                                       const std::vector<LoadedVideo>& loaded, std::ostream& log) {
  if (cfg.annotations.empty()) throw UsageError("lexicon selection needs an annotations file in the config");
  const auto ann = signal::aggregate_crowd_ratings(signal::load_annotations(cfg.annotations));
  std::map<features::RowKey, int> crowd;
  for (const auto& a : ann)
    if (a.source == signal::AnnotationSource::crowd_average) crowd[{a.video_id, a.pattern_id}] = a.rating;

  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  for (std::size_t i = 0; i < cfg.videos.size(); ++i) {
    for (std::size_t p = 0; p < loaded[i].num_patterns; ++p) {
      const auto it = crowd.find({cfg.videos[i].id, static_cast<int>(p)});
      if (it == crowd.end()) continue;
      const auto w = windows_for(loaded[i], static_cast<int>(p));
      if (w.empty()) continue;
      rows.push_back(features::lexical_features(loaded[i].transcript, lex, w));
      labels.push_back(eval::binarize(it->second));
    }
  }
  Matrix x(rows.size(), lex.size());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), x.row(r).begin());
  const auto zs = features::ZScoreParams::fit(x);
  const auto res = models::backward_eliminate(zs.apply(x), labels, features::kLexicalCount, models::lda_scorer(), 5,
                                              selection_seed(cfg));
  json j;
  j["selected"] = json::array();
  for (auto c : res.selected) j["selected"].push_back(lex.names[c]);
  j["removed"] = json::array();
  for (std::size_t k = 0; k < res.removal_order.size(); ++k)
    j["removed"].push_back({{"category", lex.names[res.removal_order[k]]}, {"cv_auc", res.round_auc[k]}});
  io::write_file_atomic(features_dir(cfg) / "lexical_selection.json", dump(j));
  log << "features: kept " << res.selected.size() << " of " << lex.size() << " lexicon categories\n";
  return lex.subset(res.selected);
}

}  // namespace

void cmd_features(const PipelineConfig& cfg, std::ostream& log) {
  if (cfg.videos.empty()) throw UsageError("config lists no videos");
  if (cfg.lexicon.empty()) throw UsageError("config has no lexicon path");
  require_file(cfg.lexicon, "lexicon");
  for (const auto& v : cfg.videos) {
    require_file(v.signal, "video " + v.id + " signal");
    require_file(v.transcript, "video " + v.id + " transcript");
    require_file(v.prosody, "video " + v.id + " prosody");
    require_file(v.face, "video " + v.id + " face");
  }
  auto lexicon = signal::load_lexicon(cfg.lexicon);
  if (lexicon.size() < features::kLexicalCount)
    throw DataError("lexicon has " + std::to_string(lexicon.size()) + " categories; at least " +
                    std::to_string(features::kLexicalCount) + " are required");

  std::vector<LoadedVideo> loaded;
  for (const auto& v : cfg.videos) {
    try {
      loaded.push_back(load_video(cfg, v));
    } catch (const DataError& e) {
      const std::string msg = e.what();
      throw DataError(msg.rfind("video ", 0) == 0 ? msg : "video " + v.id + ": " + msg);
    }
  }
  if (lexicon.size() > features::kLexicalCount) lexicon = select_lexicon(cfg, lexicon, loaded, log);

  features::FeatureMatrix fm;
  fm.columns = features::column_manifest(lexicon);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < cfg.videos.size(); ++i) {
    const auto& lv = loaded[i];
    const features::VideoTracks tracks{lv.skeleton, lv.transcript, lv.prosody, lv.face};
    for (std::size_t p = 0; p < lv.num_patterns; ++p) {
      const auto w = windows_for(lv, static_cast<int>(p));
      if (w.empty()) {
        log << "warning: video " << cfg.videos[i].id << " pattern " << p << " has no occurrences; row omitted\n";
        continue;
      }
      try {
        rows.push_back(features::assemble_pattern_row(tracks, cfg.joint_layout, cfg.face_map, lexicon, w));
      } catch (const DataError& e) {
        throw DataError("video " + cfg.videos[i].id + " pattern " + std::to_string(p) + ": " + e.what());
      }
      fm.keys.push_back({cfg.videos[i].id, static_cast<int>(p)});
    }
  }
  if (rows.empty()) throw DataError("no pattern has any occurrence; feature table would be empty");
  fm.values = Matrix(rows.size(), fm.columns.size());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), fm.values.row(r).begin());

  io::write_file_atomic(features_dir(cfg) / "features.csv", features::to_csv(fm));
  if (fm.rows() >= 2) {
    const auto [norm, params] = features::zscore_normalize(fm);
    io::write_file_atomic(features_dir(cfg) / "features_normalized.csv", features::to_csv(norm));
    json j = params.to_json();
    j["manifest_hash"] = features::manifest_hash(fm.columns);
    io::write_file_atomic(features_dir(cfg) / "normalization.json", dump(j));
  } else {
    log << "warning: a single feature row cannot be normalized; skipped features_normalized.csv\n";
  }
  log << "features: " << fm.rows() << " rows x " << fm.columns.size() << " columns\n";
}

// ---------------------------------------------------------------- train

SourceFilter parse_source_filter(const std::string& s) {
  if (s == "self") return SourceFilter::self;
  if (s == "crowd_average") return SourceFilter::crowd_average;
  if (s == "all") return SourceFilter::all;
  throw UsageError("unknown annotation source '" + s + "' (expected self, crowd_average or all)");
}

std::string to_string(SourceFilter f) {
  switch (f) {
    case SourceFilter::self: return "self";
    case SourceFilter::crowd_average: return "crowd_average";
    case SourceFilter::all: return "all";
  }
  return "unknown";
}

Joined join_annotations(const features::FeatureMatrix& fm, const std::vector<signal::AnnotationRecord>& annotations,
                        SourceFilter source) {
  std::map<features::RowKey, std::size_t> index;
  for (std::size_t r = 0; r < fm.keys.size(); ++r) index.emplace(fm.keys[r], r);
  std::vector<std::size_t> rows;
  Joined j;
  for (const auto& a : annotations) {
    const bool keep = source == SourceFilter::all ? a.source != signal::AnnotationSource::crowd
                      : source == SourceFilter::self ? a.source == signal::AnnotationSource::self
                                                     : a.source == signal::AnnotationSource::crowd_average;
    if (!keep) continue;
    const auto it = index.find({a.video_id, a.pattern_id});
    if (it == index.end()) continue;
    rows.push_back(it->second);
    j.ratings.push_back(a.rating);
    j.keys.push_back(it->first);
  }
  j.x = fm.values.select_rows(rows);
  return j;
}

std::vector<double> targets(const std::vector<int>& ratings, models::Mode mode) {
  std::vector<double> y;
  for (int r : ratings) y.push_back(mode == models::Mode::classification ? eval::binarize(r) : r);
  return y;
}

namespace {

struct Inputs {
  features::FeatureMatrix fm;
  std::vector<signal::AnnotationRecord> annotations;
};

Inputs load_inputs(const PipelineConfig& cfg) {
  require_file(cfg.features_path(), "feature table (run features first)");
  if (cfg.annotations.empty()) throw UsageError("config has no annotations path");
  require_file(cfg.annotations, "annotations");
  return {features::load_feature_matrix(cfg.features_path()),
          signal::aggregate_crowd_ratings(signal::load_annotations(cfg.annotations))};
}

void check_trainable(const Joined& j, models::Mode mode, const std::string& what) {
  if (j.ratings.empty()) throw DataError(what + ": joining annotations to feature rows produced zero rows");
  if (mode == models::Mode::classification) {
    const auto pos = std::count_if(j.ratings.begin(), j.ratings.end(), [](int r) { return eval::binarize(r) == 1; });
    if (pos == 0 || static_cast<std::size_t>(pos) == j.ratings.size())
      throw DataError(what + ": training labels contain a single class");
  }
}

}  // namespace

fs::path cmd_train(const PipelineConfig& cfg, models::Kind kind, models::Mode mode, SourceFilter source,
                   std::ostream& log) {
  const auto in = load_inputs(cfg);
  const std::string what = "train " + models::to_string(kind) + "/" + models::to_string(mode) + "/" + to_string(source);
  const auto joined = join_annotations(in.fm, in.annotations, source);
  check_trainable(joined, mode, what);
  if (joined.ratings.size() < 2) throw DataError(what + ": need at least two rows");
  const auto y = targets(joined.ratings, mode);

  const auto zs = features::ZScoreParams::fit(joined.x);
  const Matrix x = zs.apply(joined.x);
  models::TrainConfig tc = cfg.train;
  tc.seed = train_seed(cfg);
  auto model = models::fit(kind, x, y, mode, tc);
  model.manifest_hash = features::manifest_hash(in.fm.columns);

  const auto scores = models::predict(model, x);
  json j = model.to_json();
  j["normalization"] = zs.to_json();
  j["columns"] = json::array();
  for (const auto& c : in.fm.columns) j["columns"].push_back(c.name + ":" + features::to_string(c.category));
  j["training_rows"] = joined.ratings.size();
  const auto path = cfg.output_dir / "models" /
                    (models::to_string(kind) + "_" + models::to_string(mode) + "_" + to_string(source) + ".json");
  io::write_file_atomic(path, dump(j));

  log << what << ": " << joined.ratings.size() << " rows, ";
  if (mode == models::Mode::classification) {
    log << "training AUC " << eval::auc(scores, y);
  } else {
    try {
      log << "training r " << eval::pearson(scores, y);
    } catch (const DataError&) {
      log << "training r undefined (constant predictions)";
    }
  }
  log << "\nwrote " << path.string() << '\n';
  return path;
}

// ---------------------------------------------------------------- evaluate

namespace {

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

json outcome_json(const std::string& model, const std::string& mode, const std::string& source, std::size_t rows,
                  const eval::SplitOutcome& o) {
  return {{"model", model}, {"mode", mode},         {"source", source},          {"rows", rows},
          {"mean", o.mean}, {"sd", sample_sd(o.metrics)}, {"metrics", o.metrics}};
}

json weights_json(const std::vector<eval::CategoryShare>& shares) {
  json arr = json::array();
  for (const auto& s : shares)
    arr.push_back({{"category", features::to_string(s.category)},
                   {"percent", s.percent},
                   {"mean_abs_weight", s.weight},
                   {"nonzero", s.nonzero}});
  return arr;
}

std::vector<eval::CategoryShare> fitted_shares(const Matrix& raw_x, std::span<const double> y, models::Kind kind,
                                               models::Mode mode, const models::TrainConfig& tc,
                                               std::span<const features::Category> cats) {
  const auto zs = features::ZScoreParams::fit(raw_x);
  const auto model = models::fit(kind, zs.apply(raw_x), y, mode, tc);
  // An all-zero coefficient vector has no category shares; it is reported
  // as an empty table rather than failing the whole evaluation.
  if (std::none_of(model.coefficients.begin(), model.coefficients.end(),
                   [](double w) { return std::abs(w) > eval::kNonzeroWeight; }))
    return {};
  return eval::category_weights(model.coefficients, cats);
}

}  // namespace

void cmd_evaluate(const PipelineConfig& cfg, std::ostream& log) {
  const auto in = load_inputs(cfg);
  const auto cats = in.fm.categories();
  const std::uint64_t seed = eval_seed(cfg);
  eval::SplitSpec spec;
  spec.n_repeats = cfg.eval.n_repeats;
  spec.test_fraction = cfg.eval.test_fraction;
  spec.seed = seed;
  models::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(seed, 0x5EED);

  json results = json::array(), ttests = json::array(), weights = json::array();
  std::ostringstream roc_csv, weights_csv;
  roc_csv << "model,source,fpr,tpr\n";
  weights_csv << "model,task,annotation,category,percent\n";

  for (const auto mode : cfg.eval.modes) {
    const std::string mode_s = models::to_string(mode);
    const auto self = join_annotations(in.fm, in.annotations, SourceFilter::self);
    const auto crowd = join_annotations(in.fm, in.annotations, SourceFilter::crowd_average);
    check_trainable(self, mode, "evaluate " + mode_s + " self");
    check_trainable(crowd, mode, "evaluate " + mode_s + " crowd_average");
    const auto y_self = targets(self.ratings, mode);
    const auto y_crowd = targets(crowd.ratings, mode);

    for (const auto kind : cfg.eval.models) {
      const std::string kind_s = models::to_string(kind);
      const std::string ctx = "evaluate " + kind_s + "/" + mode_s;
      auto run = [&](const char* label, auto&& f) {
        try {
          return f();
        } catch (const NumericalError& e) {
          throw NumericalError(ctx + " " + label + ": " + e.what());
        } catch (const DataError& e) {
          throw DataError(ctx + " " + label + ": " + e.what());
        }
      };
      const auto o_self = run("self", [&] { return eval::repeated_splits(self.x, y_self, kind, mode, spec, tc); });
      const auto o_crowd =
          run("crowd_average", [&] { return eval::repeated_splits(crowd.x, y_crowd, kind, mode, spec, tc); });
      const auto o_sub = run("crowd_subsampled", [&] {
        return eval::subsample_experiment(crowd.x, y_crowd, cfg.eval.subsample_fraction, kind, mode, spec, tc);
      });
      results.push_back(outcome_json(kind_s, mode_s, "self", self.ratings.size(), o_self));
      results.push_back(outcome_json(kind_s, mode_s, "crowd_average", crowd.ratings.size(), o_crowd));
      const auto sub_rows = eval::subsample_rows(crowd.ratings.size(), cfg.eval.subsample_fraction, seed, 0).size();
      results.push_back(outcome_json(kind_s, mode_s, "crowd_subsampled", sub_rows, o_sub));

      const auto tt = eval::welch_ttest(o_sub.metrics, o_self.metrics);
      ttests.push_back({{"model", kind_s},
                        {"mode", mode_s},
                        {"a", "crowd_subsampled"},
                        {"b", "self"},
                        {"mean_a", o_sub.mean},
                        {"mean_b", o_self.mean},
                        {"t", tt.t},
                        {"dof", tt.dof},
                        {"p", tt.p}});

      if (mode == models::Mode::classification) {
        const std::pair<const char*, const eval::SplitOutcome*> curves[] = {
            {"self", &o_self}, {"crowd_average", &o_crowd}, {"crowd_subsampled", &o_sub}};
        for (const auto& [src, o] : curves)
          for (const auto& pt : o->mean_roc)
            roc_csv << kind_s << ',' << src << ',' << io::format_double(pt.fpr) << ',' << io::format_double(pt.tpr)
                    << '\n';
      }

      if (models::is_linear(kind)) {
        const auto sub_idx = eval::subsample_rows(crowd.ratings.size(), cfg.eval.subsample_fraction, seed, 0);
        std::vector<double> y_sub;
        for (auto i : sub_idx) y_sub.push_back(y_crowd[i]);
        const Matrix x_sub = crowd.x.select_rows(sub_idx);
        const std::pair<const char*, std::vector<eval::CategoryShare>> tables[] = {
            {"crowd_average", run("weights crowd_average",
                                  [&] { return fitted_shares(crowd.x, y_crowd, kind, mode, tc, cats); })},
            {"crowd_subsampled",
             run("weights crowd_subsampled", [&] { return fitted_shares(x_sub, y_sub, kind, mode, tc, cats); })},
            {"self", run("weights self", [&] { return fitted_shares(self.x, y_self, kind, mode, tc, cats); })}};
        for (const auto& [src, shares] : tables) {
          if (shares.empty())
            log << "warning: " << ctx << " " << src << ": all coefficients are zero; no category shares\n";
          weights.push_back({{"model", kind_s}, {"mode", mode_s}, {"annotation", src}, {"categories", weights_json(shares)}});
          for (const auto& s : shares)
            weights_csv << kind_s << ',' << mode_s << ',' << src << ',' << features::to_string(s.category) << ','
                        << io::format_double(s.percent) << '\n';
        }
      }
      log << ctx << ": self " << o_self.mean << ", crowd " << o_crowd.mean << ", crowd subsampled " << o_sub.mean
          << ", p " << tt.p << '\n';
    }
  }

  json report = {{"format", "manner-eval/1"},
                 {"seed", cfg.seed},
                 {"n_repeats", cfg.eval.n_repeats},
                 {"test_fraction", cfg.eval.test_fraction},
                 {"subsample_fraction", cfg.eval.subsample_fraction},
                 {"manifest_hash", features::manifest_hash(in.fm.columns)},
                 {"results", results},
                 {"ttests", ttests},
                 {"weights", weights}};
  const auto dir = cfg.output_dir / "evaluate";
  io::write_file_atomic(dir / "report.json", dump(report));
  io::write_file_atomic(dir / "roc.csv", roc_csv.str());
  io::write_file_atomic(dir / "weights.csv", weights_csv.str());
}

// ---------------------------------------------------------------- report

void cmd_report(const PipelineConfig& cfg, std::ostream& out) {
  const auto path = cfg.output_dir / "evaluate" / "report.json";
  require_file(path, "evaluation report (run evaluate first)");
  const auto rep = read_json(path);
  try {
    std::map<std::tuple<std::string, std::string, std::string>, double> mean;
    for (const auto& r : rep.at("results"))
      mean[{r.at("model").get<std::string>(), r.at("mode").get<std::string>(), r.at("source").get<std::string>()}] =
          r.at("mean").get<double>();

    out << std::fixed << std::setprecision(3);
    out << "Prediction (" << rep.at("n_repeats").get<std::size_t>()
        << " random splits; AUC for classification, Pearson r for regression)\n";
    out << std::left << std::setw(16) << "mode" << std::setw(12) << "model" << std::right << std::setw(8) << "self"
        << std::setw(8) << "crowd" << std::setw(10) << "crowd/sub" << std::setw(9) << "t" << std::setw(12) << "p"
        << '\n';
    for (const auto& t : rep.at("ttests")) {
      const auto model = t.at("model").get<std::string>();
      const auto mode = t.at("mode").get<std::string>();
      out << std::left << std::setw(16) << mode << std::setw(12) << model << std::right << std::setw(8)
          << mean[{model, mode, "self"}] << std::setw(8) << mean[{model, mode, "crowd_average"}] << std::setw(10)
          << mean[{model, mode, "crowd_subsampled"}] << std::setw(9) << t.at("t").get<double>();
      out << std::setw(12) << std::setprecision(3) << std::scientific << t.at("p").get<double>() << std::fixed
          << std::setprecision(3) << '\n';
    }

    if (!rep.at("weights").empty()) {
      out << "\nWeight share per category (percent)\n";
      out << std::left << std::setw(16) << "mode" << std::setw(12) << "model" << std::setw(18) << "annotation";
      const char* cats[] = {"disfluency", "prosody", "body", "face", "lexical"};
      for (const char* c : cats) out << std::right << std::setw(11) << c;
      out << '\n';
      for (const auto& w : rep.at("weights")) {
        out << std::left << std::setw(16) << w.at("mode").get<std::string>() << std::setw(12)
            << w.at("model").get<std::string>() << std::setw(18) << w.at("annotation").get<std::string>();
        for (const char* c : cats) {
          double pct = 0.0;
          for (const auto& s : w.at("categories"))
            if (s.at("category").get<std::string>() == c) pct = s.at("percent").get<double>();
          out << std::right << std::setw(11) << std::setprecision(1) << pct;
        }
        out << std::setprecision(3) << '\n';
      }
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- synth

void synth_sisc(const fs::path& dir, const synth::SiscParams& params, std::uint64_t seed) {
  const auto fx = synth::make_sisc(params, seed);
  signal::save_signal(fx.signal, dir / "signal.csv");
  sisc::FitResult truth{fx.dictionary, fx.activations, {}};
  json j = sisc::to_json(truth);
  j.erase("trace");
  j["format"] = "sisc-truth/1";
  j["seed"] = seed;
  j["noise_sd"] = params.noise_sd;
  io::write_file_atomic(dir / "truth.json", dump(j));
}

void synth_classification(const fs::path& dir, const synth::ClassificationParams& params, std::uint64_t seed) {
  const auto fx = synth::make_classification(params, seed);
  io::write_file_atomic(dir / "features.csv", features::to_csv(fx.matrix));
  std::ostringstream ann;
  ann << "video_id,pattern_id,rating,source\n";
  for (const auto& a : fx.annotations)
    ann << a.video_id << ',' << a.pattern_id << ',' << a.rating << ',' << signal::to_string(a.source) << '\n';
  io::write_file_atomic(dir / "annotations.csv", ann.str());
  const json config = {{"seed", seed},
                       {"output_dir", "out"},
                       {"features", "features.csv"},
                       {"annotations", "annotations.csv"},
                       {"eval",
                        {{"n_repeats", 30},
                         {"test_fraction", 0.2},
                         {"subsample_fraction", params.self_fraction},
                         {"models", {"lasso"}},
                         {"modes", {"classification"}}}}};
  io::write_file_atomic(dir / "config.json", dump(config));
}

}  // namespace manner::pipeline
