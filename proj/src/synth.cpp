#include "manner/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "manner/error.hpp"
#include "manner/io_util.hpp"
#include "manner/rng.hpp"

namespace manner::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string zero_pad(std::size_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, v);
  return buf;
}

// Smooth Hann-tapered multi-sine template with unit Frobenius norm.
Matrix smooth_pattern(std::size_t len, std::size_t chans, Rng& rng) {
  Matrix p(len, chans);
  for (std::size_t c = 0; c < chans; ++c) {
    double amp[3], phase[3];
    for (int h = 0; h < 3; ++h) {
      amp[h] = rng.normal();
      phase[h] = rng.uniform(0.0, kTwoPi);
    }
    for (std::size_t m = 0; m < len; ++m) {
      const double u = static_cast<double>(m) / static_cast<double>(len);
      const double taper = 0.5 - 0.5 * std::cos(kTwoPi * (static_cast<double>(m) + 0.5) / static_cast<double>(len));
      double v = 0.0;
      for (int h = 0; h < 3; ++h) v += amp[h] * std::sin(kTwoPi * (h + 1) * u + phase[h]);
      p(m, c) = taper * v;
    }
  }
  const double norm = sisc::frobenius_norm(p);
  for (double& v : p.values()) v /= norm;
  return p;
}

// Start indices in [0, last] pairwise at least `gap` apart.
std::vector<std::size_t> spaced_positions(std::size_t count, std::size_t last, std::size_t gap, Rng& rng) {
  std::vector<std::size_t> out;
  std::size_t attempts = 0;
  while (out.size() < count) {
    if (++attempts > 100000) throw UsageError("synth: cannot place occurrences; signal too short for the request");
    const auto k = static_cast<std::size_t>(rng.below(last + 1));
    const bool clear = std::all_of(out.begin(), out.end(), [&](std::size_t o) { return (k > o ? k - o : o - k) >= gap; });
    if (clear) out.push_back(k);
  }
  return out;
}

int rating_from_latent(double z) {
  // 3.5 + 1.5 z rounds to >= 4 exactly when z >= 0.
  return static_cast<int>(std::clamp(std::llround(3.5 + 1.5 * z), 1LL, 7LL));
}

}  // namespace

void SiscParams::validate() const {
  if (channels == 0 || num_patterns == 0 || pattern_length == 0) throw UsageError("synth: sizes must be positive");
  if (length <= pattern_length) throw UsageError("synth: length must exceed pattern_length");
  if (!(noise_sd >= 0.0)) throw UsageError("synth: noise_sd must be non-negative");
  if (!(sample_rate_hz > 0.0)) throw UsageError("synth: sample_rate_hz must be positive");
  if (!(min_amplitude > 0.0 && max_amplitude >= min_amplitude))
    throw UsageError("synth: need 0 < min_amplitude <= max_amplitude");
  if (num_patterns * occurrences_per_pattern * pattern_length > length - pattern_length + 1)
    throw UsageError("synth: occurrences do not fit without overlap");
}

SiscFixture make_sisc(const SiscParams& params, std::uint64_t seed) {
  params.validate();
  Rng rng(seed);
  sisc::PatternDictionary dict;
  dict.sample_rate_hz = params.sample_rate_hz;
  for (std::size_t d = 0; d < params.num_patterns; ++d)
    dict.patterns.push_back(smooth_pattern(params.pattern_length, params.channels, rng));

  sisc::ActivationSet acts{Matrix(params.num_patterns, params.length)};
  const auto starts = spaced_positions(params.num_patterns * params.occurrences_per_pattern,
                                       params.length - params.pattern_length, params.pattern_length, rng);
  for (std::size_t i = 0; i < starts.size(); ++i)
    acts.trains(i % params.num_patterns, starts[i]) = rng.uniform(params.min_amplitude, params.max_amplitude);

  Matrix samples = sisc::reconstruct(dict, acts, params.length);
  if (params.noise_sd > 0.0)
    for (double& v : samples.values()) v += params.noise_sd * rng.normal();

  std::vector<std::string> names;
  for (std::size_t c = 0; c < params.channels; ++c) names.push_back("ch" + std::to_string(c));
  return {signal::MultichannelSignal(std::move(samples), params.sample_rate_hz, std::move(names)), std::move(dict),
          std::move(acts)};
}

double shift_aligned_ncc(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw DataError("ncc: channel counts differ");
  const double na = sisc::frobenius_norm(a), nb = sisc::frobenius_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  const auto ma = static_cast<long long>(a.rows()), mb = static_cast<long long>(b.rows());
  double best = -1.0;
  for (long long s = -(mb - 1); s <= ma - 1; ++s) {
    double dot = 0.0;
    for (long long m = std::max(0LL, s); m < std::min(ma, mb + s); ++m) {
      const auto ra = a.row(static_cast<std::size_t>(m));
      const auto rb = b.row(static_cast<std::size_t>(m - s));
      for (std::size_t c = 0; c < ra.size(); ++c) dot += ra[c] * rb[c];
    }
    best = std::max(best, dot / (na * nb));
  }
  return best;
}

void ClassificationParams::validate() const {
  if (rows < 10) throw UsageError("synth: classification needs at least 10 rows");
  if (!(self_fraction > 0.0 && self_fraction <= 1.0)) throw UsageError("synth: self_fraction must be in (0, 1]");
  if (!(crowd_strength >= 0.0) || !(self_strength >= 0.0)) throw UsageError("synth: strengths must be non-negative");
}

signal::CategoryLexicon default_lexicon() {
  signal::CategoryLexicon lex;
  const std::vector<std::pair<std::string, std::vector<std::string>>> table = {
      {"i", {"i", "me", "my", "mine"}},
      {"we", {"we", "us", "our*"}},
      {"you", {"you", "your*"}},
      {"social", {"friend*", "talk*", "people"}},
      {"affect", {"feel*", "emotion*"}},
      {"posemo", {"good", "happ*", "love*", "nice"}},
      {"negemo", {"bad", "hate*", "hurt*"}},
      {"anx", {"worr*", "nervous*", "afraid"}},
      {"anger", {"angr*", "mad", "annoy*"}},
      {"sad", {"sad*", "cry*", "lonel*"}},
      {"cogmech", {"think*", "know*", "because"}},
      {"insight", {"understand*", "realiz*", "idea*"}},
      {"cause", {"cause*", "effect*", "reason*"}},
      {"discrep", {"should", "would", "could"}},
      {"tentat", {"maybe", "perhaps", "guess*"}},
      {"certain", {"always", "never", "sure*"}},
      {"percept", {"observ*", "sense*"}},
      {"see", {"see*", "look*", "view*"}},
      {"hear", {"hear*", "listen*", "sound*"}},
      {"feel", {"touch*", "hold*", "soft*"}},
      {"motion", {"walk*", "move*", "go"}},
      {"space", {"up", "down", "here", "there"}},
      {"time", {"now", "then", "today", "later"}},
  };
  for (const auto& [name, stems] : table) {
    lex.names.push_back(name);
    lex.stems.push_back(stems);
  }
  return lex;
}

std::string lexicon_text(const signal::CategoryLexicon& lexicon) {
  std::ostringstream out;
  for (std::size_t i = 0; i < lexicon.size(); ++i) {
    out << lexicon.names[i] << ':';
    for (const auto& s : lexicon.stems[i]) out << ' ' << s;
    out << '\n';
  }
  return out.str();
}

ClassificationFixture make_classification(const ClassificationParams& params, std::uint64_t seed) {
  params.validate();
  Rng rng(seed);
  ClassificationFixture fx;
  fx.matrix.columns = features::column_manifest(default_lexicon());
  const std::size_t p = fx.matrix.columns.size();
  const std::size_t n = params.rows;
  fx.matrix.values = Matrix(n, p);
  for (double& v : fx.matrix.values.values()) v = rng.normal();
  for (std::size_t r = 0; r < n; ++r)
    fx.matrix.keys.push_back({"v" + zero_pad(r / 5, 3), static_cast<int>(r % 5)});

  // Crowd ratings follow three prosody and three body columns; self ratings
  // follow four lexical columns. Each planted direction has unit variance.
  const std::size_t pros = features::kDisfluencyCount;
  const std::size_t body = pros + features::kProsodyCount;
  const std::size_t lex = body + features::kBodyCount + features::kFaceCount;
  const std::vector<std::pair<std::size_t, double>> crowd_w = {
      {pros + 0, 1.0}, {pros + 5, -1.0}, {pros + 10, 1.0}, {body + 0, -1.0}, {body + 4, 1.0}, {body + 8, -1.0}};
  const std::vector<std::pair<std::size_t, double>> self_w = {
      {lex + 0, 1.0}, {lex + 1, 1.0}, {lex + 2, -1.0}, {lex + 3, 1.0}};
  auto direction = [&](std::size_t r, const std::vector<std::pair<std::size_t, double>>& w) {
    double s = 0.0;
    for (const auto& [c, wt] : w) s += wt * fx.matrix.values(r, c);
    return s / std::sqrt(static_cast<double>(w.size()));
  };

  const auto n_self = static_cast<std::size_t>(std::llround(params.self_fraction * static_cast<double>(n)));
  const auto order = rng.permutation(n);
  std::vector<std::size_t> self_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::max<std::size_t>(n_self, 1)));
  std::sort(self_rows.begin(), self_rows.end());

  std::vector<int> self_ratings;
  for (auto r : self_rows) self_ratings.push_back(rating_from_latent(params.self_strength * direction(r, self_w) + rng.normal()));
  if (params.permute_self) rng.shuffle(std::span<int>(self_ratings));

  for (std::size_t r = 0; r < n; ++r) {
    const auto& key = fx.matrix.keys[r];
    const int crowd = rating_from_latent(params.crowd_strength * direction(r, crowd_w) + rng.normal());
    fx.annotations.push_back({key.video_id, key.pattern_id, crowd, signal::AnnotationSource::crowd_average});
  }
  for (std::size_t i = 0; i < self_rows.size(); ++i) {
    const auto& key = fx.matrix.keys[self_rows[i]];
    fx.annotations.push_back({key.video_id, key.pattern_id, self_ratings[i], signal::AnnotationSource::self});
  }
  return fx;
}

namespace {

std::string annotations_csv(const std::vector<signal::AnnotationRecord>& records) {
  std::ostringstream out;
  out << "video_id,pattern_id,rating,source\n";
  for (const auto& a : records)
    out << a.video_id << ',' << a.pattern_id << ',' << a.rating << ',' << signal::to_string(a.source) << '\n';
  return out.str();
}

signal::CategoryLexicon toy_lexicon(std::size_t categories) {
  auto lex = default_lexicon();
  if (categories < lex.size()) throw UsageError("synth: toy lexicon needs at least 23 categories");
  for (std::size_t k = lex.size(); k < categories; ++k) {
    lex.names.push_back("extra" + std::to_string(k));
    lex.stems.push_back({"xw" + std::to_string(k) + "*"});
  }
  return lex;
}

signal::MultichannelSignal toy_skeleton(const ToyParams& params, Rng& rng) {
  const auto layout = signal::JointLayout::kinect_v1();
  const auto n = static_cast<std::size_t>(std::llround(params.seconds * params.sample_rate_hz));
  const std::size_t joints = layout.joint_names.size();
  const auto motif_len = static_cast<std::size_t>(std::llround(params.sample_rate_hz));
  Matrix s(n, 3 * joints);
  for (std::size_t j = 0; j < joints; ++j) {
    const double base[3] = {0.1 * static_cast<double>(j % 4), 1.0 - 0.08 * static_cast<double>(j), 2.5};
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t a = 0; a < 3; ++a) s(t, 3 * j + a) = base[a] + 0.002 * rng.normal();
  }
  // Two arm motifs repeated through the clip.
  for (int motif = 0; motif < 2; ++motif) {
    const std::size_t joint = motif == 0 ? 6 : 10;
    const double freq = motif == 0 ? 1.0 : 2.0;
    const auto count = std::max<std::size_t>(1, n / (4 * motif_len));
    for (std::size_t k = 0; k < count; ++k) {
      const auto start = static_cast<std::size_t>(rng.below(n - motif_len));
      const double amp = rng.uniform(0.05, 0.15);
      for (std::size_t m = 0; m < motif_len; ++m) {
        const double u = static_cast<double>(m) / static_cast<double>(motif_len);
        const double v = amp * std::sin(kTwoPi * freq * u) * std::sin(std::numbers::pi * u);
        s(start + m, 3 * joint) += v;
        s(start + m, 3 * joint + 1) += 0.5 * v;
        s(start + m, 3 * (joint - 1)) += 0.5 * v;
      }
    }
  }
  std::vector<std::string> names;
  for (const auto& j : layout.joint_names)
    for (const char* a : {"_x", "_y", "_z"}) names.push_back(j + a);
  return {std::move(s), params.sample_rate_hz, std::move(names)};
}

std::string toy_transcript(const ToyParams& params, const signal::CategoryLexicon& lex, Rng& rng) {
  static const std::vector<std::string> neutral = {"the", "a", "and", "so", "it", "was", "of", "to", "in", "that"};
  std::ostringstream out;
  double t = 0.0;
  while (true) {
    const double u = rng.uniform();
    std::string kind = "word", text;
    double dur = rng.uniform(0.15, 0.5);
    if (u < 0.12) {
      kind = "filler";
      text = rng.below(2) ? "um" : "uh";
    } else if (u < 0.24) {
      kind = "pause";
      text = "<pause>";
      dur = rng.uniform(0.2, 1.0);
    } else if (u < 0.6) {
      const auto c = rng.below(lex.size());
      std::string stem = lex.stems[c][rng.below(lex.stems[c].size())];
      if (stem.back() == '*') stem.back() = 's';
      text = stem;
    } else {
      text = neutral[rng.below(neutral.size())];
    }
    if (t + dur >= params.seconds) break;
    nlohmann::json j = {{"text", text}, {"start_s", t}, {"end_s", t + dur}, {"kind", kind}};
    out << j.dump() << '\n';
    t += dur + rng.uniform(0.0, 0.1);
  }
  return out.str();
}

std::string toy_prosody(const ToyParams& params, Rng& rng) {
  std::ostringstream out;
  out << "t_s,loudness,pitch_hz,f1_hz,f2_hz,f3_hz,voiced\n";
  const auto n = static_cast<std::size_t>(std::llround(params.seconds * params.sample_rate_hz));
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / params.sample_rate_hz;
    const bool voiced = rng.uniform() < 0.6;
    out << io::format_double(t) << ',' << io::format_double(60.0 + 5.0 * rng.normal()) << ',';
    if (voiced)
      out << io::format_double(120.0 + 20.0 * rng.normal()) << ',' << io::format_double(500.0 + 50.0 * rng.normal())
          << ',' << io::format_double(1500.0 + 100.0 * rng.normal()) << ','
          << io::format_double(2500.0 + 150.0 * rng.normal()) << ",1\n";
    else
      out << ",,,,0\n";
  }
  return out.str();
}

std::string toy_face(const ToyParams& params, Rng& rng) {
  std::ostringstream out;
  out << "t_s";
  for (std::size_t k = 0; k < signal::kFaceLandmarks; ++k) out << ",x" << k << ",y" << k;
  out << ",pitch,yaw,roll\n";
  const auto n = static_cast<std::size_t>(std::llround(params.seconds * params.sample_rate_hz));
  const double scale = rng.uniform(40.0, 60.0);
  for (std::size_t i = 0; i < n; ++i) {
    out << io::format_double(static_cast<double>(i) / params.sample_rate_hz);
    for (std::size_t k = 0; k < signal::kFaceLandmarks; ++k) {
      const double ang = kTwoPi * static_cast<double>(k) / static_cast<double>(signal::kFaceLandmarks);
      out << ',' << io::format_double(200.0 + scale * std::cos(ang) + 0.5 * rng.normal()) << ','
          << io::format_double(200.0 + 1.2 * scale * std::sin(ang) + 0.5 * rng.normal());
    }
    out << ',' << io::format_double(2.0 * rng.normal()) << ',' << io::format_double(3.0 * rng.normal()) << ','
        << io::format_double(1.5 * rng.normal()) << '\n';
  }
  return out.str();
}

}  // namespace

void write_toy_dataset(const std::filesystem::path& dir, const ToyParams& params, std::uint64_t seed) {
  if (params.videos == 0) throw UsageError("synth: toy dataset needs at least one video");
  if (!(params.seconds >= 5.0) || !(params.sample_rate_hz > 0.0))
    throw UsageError("synth: toy clips must be at least 5 s long with a positive rate");
  constexpr int kPatterns = 6;
  const auto lex = toy_lexicon(params.lexicon_categories);
  io::write_file_atomic(dir / "lexicon.txt", lexicon_text(lex));

  nlohmann::json videos = nlohmann::json::array();
  std::vector<signal::AnnotationRecord> ann;
  for (std::size_t v = 0; v < params.videos; ++v) {
    Rng rng(derive_seed(seed, v));
    const std::string id = "v" + zero_pad(v, 2);
    signal::save_signal(toy_skeleton(params, rng), dir / (id + ".signal.csv"));
    io::write_file_atomic(dir / (id + ".transcript.jsonl"), toy_transcript(params, lex, rng));
    io::write_file_atomic(dir / (id + ".prosody.csv"), toy_prosody(params, rng));
    io::write_file_atomic(dir / (id + ".face.csv"), toy_face(params, rng));
    videos.push_back({{"id", id},
                      {"signal", id + ".signal.csv"},
                      {"transcript", id + ".transcript.jsonl"},
                      {"prosody", id + ".prosody.csv"},
                      {"face", id + ".face.csv"}});
    for (int p = 0; p < kPatterns; ++p) {
      for (int w = 0; w < 3; ++w)
        ann.push_back({id, p, static_cast<int>(1 + rng.below(7)), signal::AnnotationSource::crowd});
      ann.push_back({id, p, static_cast<int>(1 + rng.below(7)), signal::AnnotationSource::self});
    }
  }
  io::write_file_atomic(dir / "annotations.csv", annotations_csv(ann));

  const nlohmann::json config = {
      {"seed", seed},
      {"output_dir", "out"},
      {"videos", videos},
      {"lexicon", "lexicon.txt"},
      {"annotations", "annotations.csv"},
      {"solver",
       {{"num_patterns", kPatterns},
        {"pattern_seconds", 1.0},
        {"lambda", 0.05},
        {"max_iters", 100},
        {"rel_tol", 1e-5},
        {"min_amplitude_frac", 0.1}}},
      {"train", {{"lasso_lambda", 0.01}, {"margin_epochs", 500}, {"nn_epochs", 300}}},
      {"eval",
       {{"n_repeats", 30},
        {"test_fraction", 0.2},
        {"subsample_fraction", 1.0 / 3.0},
        {"models", {"lasso", "max_margin", "lda", "neural_net"}},
        {"modes", {"classification", "regression"}}}}};
  io::write_file_atomic(dir / "config.json", config.dump(2) + "\n");
}

}  // namespace manner::synth
