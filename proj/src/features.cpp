#include "manner/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "manner/error.hpp"
#include "manner/io_util.hpp"

namespace manner::features {

namespace {

struct Summary {
  double mean = 0.0, min = 0.0, max = 0.0, range = 0.0, std = 0.0;
};

// Population statistics; an empty pool summarizes to all zeros.
Summary summarize(const std::vector<double>& xs) {
  Summary s;
  if (xs.empty()) return s;
  double sum = 0.0;
  s.min = xs.front();
  s.max = xs.front();
  for (double x : xs) {
    sum += x;
    s.min = std::min(s.min, x);
    s.max = std::max(s.max, x);
  }
  const double n = static_cast<double>(xs.size());
  s.mean = sum / n;
  if (s.min != s.max) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / n);
  } else {
    s.mean = s.min;
  }
  s.range = s.max - s.min;
  return s;
}

std::size_t times_in(std::span<const Window> windows, double t) {
  return static_cast<std::size_t>(
      std::count_if(windows.begin(), windows.end(), [t](const Window& w) { return w.contains(t); }));
}

std::string sanitize(std::string_view s) {
  std::string out;
  for (char c : s) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

std::string normalize_word(std::string_view w) {
  auto keep = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '\''; };
  std::size_t b = 0, e = w.size();
  while (b < e && !keep(w[b])) ++b;
  while (e > b && !keep(w[e - 1])) --e;
  std::string out(w.substr(b, e - b));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

using Vec3 = std::array<double, 3>;

double norm3(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

// Central differences inside, one-sided at both ends; needs >= 2 points.
std::vector<Vec3> differentiate(const std::vector<Vec3>& p, double rate) {
  const std::size_t n = p.size();
  std::vector<Vec3> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 == n ? n - 1 : i + 1;
    const double scale = rate / static_cast<double>(hi - lo);
    for (int a = 0; a < 3; ++a) v[i][a] = (p[hi][a] - p[lo][a]) * scale;
  }
  return v;
}

}  // namespace

std::string to_string(Category c) {
  switch (c) {
    case Category::disfluency: return "disfluency";
    case Category::prosody: return "prosody";
    case Category::body: return "body";
    case Category::face: return "face";
    case Category::lexical: return "lexical";
  }
  return "disfluency";
}

Category parse_category(const std::string& s) {
  if (s == "disfluency") return Category::disfluency;
  if (s == "prosody") return Category::prosody;
  if (s == "body") return Category::body;
  if (s == "face") return Category::face;
  if (s == "lexical") return Category::lexical;
  throw DataError("unknown feature category '" + s + "'");
}

FaceMap FaceMap::default_66() {
  FaceMap m;
  m.distances = {{{"obh_right", 17, 36},
                  {"obh_left", 26, 45},
                  {"ibh_right", 21, 39},
                  {"ibh_left", 22, 42},
                  {"olh_right", 37, 41},
                  {"olh_left", 44, 46},
                  {"ilh_right", 38, 40},
                  {"ilh_left", 43, 47},
                  {"lip_corner_dist", 48, 54}}};
  m.right_eye = {36, 37, 38, 39, 40, 41};
  m.left_eye = {42, 43, 44, 45, 46, 47};
  return m;
}

void FaceMap::validate() const {
  for (const auto& p : distances)
    if (p.a >= signal::kFaceLandmarks || p.b >= signal::kFaceLandmarks || p.name.empty())
      throw DataError("face_map: bad distance pair '" + p.name + "'");
  if (left_eye.empty() || right_eye.empty()) throw DataError("face_map: eye landmark groups must be nonempty");
  for (auto i : left_eye)
    if (i >= signal::kFaceLandmarks) throw DataError("face_map: left_eye index out of range");
  for (auto i : right_eye)
    if (i >= signal::kFaceLandmarks) throw DataError("face_map: right_eye index out of range");
}

FaceMap FaceMap::from_json(const nlohmann::json& j) {
  try {
    FaceMap m;
    const auto& d = j.at("distances");
    if (d.size() != m.distances.size()) throw DataError("face_map: expected 9 distances");
    for (std::size_t i = 0; i < d.size(); ++i) {
      m.distances[i].name = d[i].at("name").get<std::string>();
      m.distances[i].a = d[i].at("a").get<std::size_t>();
      m.distances[i].b = d[i].at("b").get<std::size_t>();
    }
    m.left_eye = j.at("left_eye").get<std::vector<std::size_t>>();
    m.right_eye = j.at("right_eye").get<std::vector<std::size_t>>();
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("face_map: ") + e.what());
  }
}

nlohmann::json FaceMap::to_json() const {
  nlohmann::json d = nlohmann::json::array();
  for (const auto& p : distances) d.push_back({{"name", p.name}, {"a", p.a}, {"b", p.b}});
  return {{"distances", d}, {"left_eye", left_eye}, {"right_eye", right_eye}};
}

std::vector<Column> column_manifest(const signal::CategoryLexicon& lexicon) {
  std::vector<Column> cols;
  for (const char* kind : {"word", "filler", "pause"})
    cols.push_back({std::string("disfluency.") + kind + "_avg_s", Category::disfluency});
  for (const char* kind : {"word", "filler", "pause"})
    cols.push_back({std::string("disfluency.") + kind + "_count", Category::disfluency});
  for (const char* kind : {"word", "filler", "pause"})
    cols.push_back({std::string("disfluency.") + kind + "_prop", Category::disfluency});

  for (const char* sig : {"loudness", "pitch", "f1", "f2", "f3"})
    for (const char* stat : {"mean", "min", "max", "range", "std"})
      cols.push_back({std::string("prosody.") + sig + "_" + stat, Category::prosody});
  cols.push_back({"prosody.voiced_ratio", Category::prosody});

  const auto layout = signal::JointLayout::kinect_v1();
  for (auto j : layout.tracked_joints)
    for (const char* stat : {"pos_mean", "speed_mean", "speed_std", "acc_mean", "acc_std"})
      cols.push_back({"body." + layout.joint_names[j] + "_" + stat, Category::body});

  const auto fm = FaceMap::default_66();
  for (const auto& p : fm.distances)
    for (const char* stat : {"mean", "std"}) cols.push_back({"face." + p.name + "_" + stat, Category::face});
  for (const char* angle : {"pitch", "yaw", "roll"})
    for (const char* stat : {"mean", "std"})
      cols.push_back({std::string("face.head_") + angle + "_" + stat, Category::face});

  for (const auto& name : lexicon.names) cols.push_back({"lexical." + sanitize(name), Category::lexical});
  return cols;
}

std::array<double, kDisfluencyCount> disfluency_features(const signal::AlignedTranscript& transcript,
                                                         std::span<const Window> windows) {
  std::array<double, 3> duration{}, count{};
  for (const auto& t : transcript.tokens) {
    const auto hits = times_in(windows, 0.5 * (t.start_s + t.end_s));
    if (hits == 0) continue;
    const auto k = static_cast<std::size_t>(t.kind);
    duration[k] += static_cast<double>(hits) * (t.end_s - t.start_s);
    count[k] += static_cast<double>(hits);
  }
  const double total = count[0] + count[1] + count[2];
  std::array<double, kDisfluencyCount> out{};
  for (std::size_t k = 0; k < 3; ++k) {
    out[k] = count[k] > 0 ? duration[k] / count[k] : 0.0;
    out[3 + k] = count[k];
    out[6 + k] = total > 0 ? count[k] / total : 0.0;
  }
  return out;
}

std::array<double, kProsodyCount> prosody_features(const signal::ProsodyTrack& track, std::span<const Window> windows) {
  std::array<std::vector<double>, 5> pools;
  double voiced = 0.0, unvoiced = 0.0;
  for (const auto& f : track.frames) {
    const auto hits = times_in(windows, f.t_s);
    for (std::size_t h = 0; h < hits; ++h) {
      pools[0].push_back(f.loudness);
      if (f.voiced) {
        voiced += 1.0;
        if (f.pitch_hz) pools[1].push_back(*f.pitch_hz);
        if (f.f1_hz) pools[2].push_back(*f.f1_hz);
        if (f.f2_hz) pools[3].push_back(*f.f2_hz);
        if (f.f3_hz) pools[4].push_back(*f.f3_hz);
      } else {
        unvoiced += 1.0;
      }
    }
  }
  std::array<double, kProsodyCount> out{};
  for (std::size_t s = 0; s < pools.size(); ++s) {
    const auto st = summarize(pools[s]);
    out[5 * s + 0] = st.mean;
    out[5 * s + 1] = st.min;
    out[5 * s + 2] = st.max;
    out[5 * s + 3] = st.range;
    out[5 * s + 4] = st.std;
  }
  out[25] = voiced / std::max(1.0, unvoiced);
  return out;
}

std::array<double, kBodyCount> body_features(const signal::MultichannelSignal& sig, const signal::JointLayout& layout,
                                             std::span<const Window> windows) {
  layout.validate();
  if (layout.tracked_joints.size() != 8) throw DataError("body features need exactly 8 tracked joints");
  if (sig.channels() < 3 * layout.joint_names.size())
    throw DataError("skeleton signal has " + std::to_string(sig.channels()) + " channels, layout needs " +
                    std::to_string(3 * layout.joint_names.size()));
  const double rate = sig.sample_rate_hz();
  const auto& s = sig.samples();
  const std::size_t ref = layout.channel_of(layout.reference_joint);

  std::array<double, kBodyCount> out{};
  for (std::size_t j = 0; j < 8; ++j) {
    const std::size_t ch = layout.channel_of(layout.tracked_joints[j]);
    std::vector<double> pos, speed, acc;
    for (const auto& w : windows) {
      std::vector<Vec3> rel;
      for (std::size_t n = 0; n < sig.length(); ++n) {
        if (!w.contains(static_cast<double>(n) / rate)) continue;
        rel.push_back({s(n, ch) - s(n, ref), s(n, ch + 1) - s(n, ref + 1), s(n, ch + 2) - s(n, ref + 2)});
      }
      for (const auto& p : rel) pos.push_back(norm3(p));
      if (rel.size() < 3) continue;
      const auto vel = differentiate(rel, rate);
      const auto accel = differentiate(vel, rate);
      for (const auto& v : vel) speed.push_back(norm3(v));
      for (const auto& a : accel) acc.push_back(norm3(a));
    }
    const auto p = summarize(pos), v = summarize(speed), a = summarize(acc);
    out[5 * j + 0] = p.mean;
    out[5 * j + 1] = v.mean;
    out[5 * j + 2] = v.std;
    out[5 * j + 3] = a.mean;
    out[5 * j + 4] = a.std;
  }
  return out;
}

std::array<double, kFaceCount> face_features(const signal::FaceTrack& track, std::span<const Window> windows,
                                             const FaceMap& face_map) {
  face_map.validate();
  auto centroid = [](const signal::FaceFrame& f, const std::vector<std::size_t>& idx) {
    std::array<double, 2> c{};
    for (auto i : idx) {
      c[0] += f.landmarks[i][0];
      c[1] += f.landmarks[i][1];
    }
    c[0] /= static_cast<double>(idx.size());
    c[1] /= static_cast<double>(idx.size());
    return c;
  };
  auto dist = [](const std::array<double, 2>& a, const std::array<double, 2>& b) {
    return std::hypot(a[0] - b[0], a[1] - b[1]);
  };

  std::array<std::vector<double>, 12> pools;
  for (const auto& f : track.frames) {
    const auto hits = times_in(windows, f.t_s);
    if (hits == 0) continue;
    const double eye = dist(centroid(f, face_map.left_eye), centroid(f, face_map.right_eye));
    if (!(eye > 0.0)) continue;
    std::array<double, 12> vals{};
    for (std::size_t i = 0; i < 9; ++i) {
      const auto& p = face_map.distances[i];
      vals[i] = dist(f.landmarks[p.a], f.landmarks[p.b]) / eye;
    }
    vals[9] = f.pitch;
    vals[10] = f.yaw;
    vals[11] = f.roll;
    for (std::size_t h = 0; h < hits; ++h)
      for (std::size_t i = 0; i < 12; ++i) pools[i].push_back(vals[i]);
  }
  std::array<double, kFaceCount> out{};
  for (std::size_t i = 0; i < 12; ++i) {
    const auto st = summarize(pools[i]);
    out[2 * i] = st.mean;
    out[2 * i + 1] = st.std;
  }
  return out;
}

bool stem_matches(std::string_view stem, std::string_view word) {
  if (!stem.empty() && stem.back() == '*') {
    stem.remove_suffix(1);
    return word.substr(0, stem.size()) == stem;
  }
  return word == stem;
}

std::vector<double> lexical_features(const signal::AlignedTranscript& transcript,
                                     const signal::CategoryLexicon& lexicon, std::span<const Window> windows) {
  lexicon.validate();
  std::vector<double> out(lexicon.size(), 0.0);
  for (const auto& t : transcript.tokens) {
    if (t.kind != signal::TokenKind::word) continue;
    const auto hits = times_in(windows, 0.5 * (t.start_s + t.end_s));
    if (hits == 0) continue;
    const auto word = normalize_word(t.text);
    if (word.empty()) continue;
    for (std::size_t c = 0; c < lexicon.size(); ++c) {
      const auto& stems = lexicon.stems[c];
      if (std::any_of(stems.begin(), stems.end(), [&](const std::string& s) { return stem_matches(s, word); }))
        out[c] += static_cast<double>(hits);
    }
  }
  return out;
}

std::vector<double> assemble_pattern_row(const VideoTracks& tracks, const signal::JointLayout& layout,
                                         const FaceMap& face_map, const signal::CategoryLexicon& lexicon,
                                         std::span<const Window> windows) {
  if (windows.empty()) throw DataError("a pattern row needs at least one occurrence window");
  std::vector<double> row;
  row.reserve(99 + lexicon.size());
  const auto d = disfluency_features(tracks.transcript, windows);
  const auto p = prosody_features(tracks.prosody, windows);
  const auto b = body_features(tracks.skeleton, layout, windows);
  const auto f = face_features(tracks.face, windows, face_map);
  const auto l = lexical_features(tracks.transcript, lexicon, windows);
  row.insert(row.end(), d.begin(), d.end());
  row.insert(row.end(), p.begin(), p.end());
  row.insert(row.end(), b.begin(), b.end());
  row.insert(row.end(), f.begin(), f.end());
  row.insert(row.end(), l.begin(), l.end());
  for (double v : row)
    if (!std::isfinite(v)) throw NumericalError("non-finite feature value");
  return row;
}

std::vector<Category> FeatureMatrix::categories() const {
  std::vector<Category> out;
  for (const auto& c : columns) out.push_back(c.category);
  return out;
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> idx) const {
  FeatureMatrix out;
  out.columns = columns;
  for (auto i : idx) out.keys.push_back(keys.at(i));
  out.values = values.select_rows(idx);
  return out;
}

FeatureMatrix FeatureMatrix::select_columns(std::span<const std::size_t> idx) const {
  FeatureMatrix out;
  for (auto i : idx) out.columns.push_back(columns.at(i));
  out.keys = keys;
  out.values = values.select_cols(idx);
  return out;
}

ZScoreParams ZScoreParams::fit(const Matrix& m) {
  if (m.rows() < 2) throw DataError("z-score normalization needs at least 2 rows");
  ZScoreParams p;
  p.means.resize(m.cols());
  p.stds.resize(m.cols());
  const double n = static_cast<double>(m.rows());
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double sum = 0.0, lo = m(0, c), hi = m(0, c);
    for (std::size_t r = 0; r < m.rows(); ++r) {
      sum += m(r, c);
      lo = std::min(lo, m(r, c));
      hi = std::max(hi, m(r, c));
    }
    if (lo == hi) {
      p.means[c] = lo;
      p.stds[c] = 0.0;
      continue;
    }
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) ss += (m(r, c) - mean) * (m(r, c) - mean);
    p.means[c] = mean;
    p.stds[c] = std::sqrt(ss / n);
  }
  return p;
}

Matrix ZScoreParams::apply(const Matrix& m) const {
  if (m.cols() != means.size()) throw DataError("z-score parameters do not match the column count");
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      out(r, c) = stds[c] > 0.0 ? (m(r, c) - means[c]) / stds[c] : 0.0;
  return out;
}

nlohmann::json ZScoreParams::to_json() const { return {{"means", means}, {"stds", stds}}; }

ZScoreParams ZScoreParams::from_json(const nlohmann::json& j) {
  try {
    ZScoreParams p;
    p.means = j.at("means").get<std::vector<double>>();
    p.stds = j.at("stds").get<std::vector<double>>();
    if (p.means.size() != p.stds.size()) throw DataError("normalization means/stds length mismatch");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed normalization JSON: ") + e.what());
  }
}

std::pair<FeatureMatrix, ZScoreParams> zscore_normalize(const FeatureMatrix& m) {
  auto params = ZScoreParams::fit(m.values);
  FeatureMatrix out{m.columns, m.keys, params.apply(m.values)};
  return {std::move(out), std::move(params)};
}

std::string to_csv(const FeatureMatrix& m) {
  std::ostringstream ss;
  ss << "video_id,pattern_id";
  for (const auto& c : m.columns) ss << ',' << c.name << ':' << to_string(c.category);
  ss << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    ss << m.keys[r].video_id << ',' << m.keys[r].pattern_id;
    for (double v : m.values.row(r)) ss << ',' << io::format_double(v);
    ss << '\n';
  }
  return ss.str();
}

FeatureMatrix load_feature_matrix(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty()) throw DataError(path.string() + ": empty feature matrix");
  const auto header = io::split(lines[0], ',');
  if (header.size() < 3 || io::trim(header[0]) != "video_id" || io::trim(header[1]) != "pattern_id")
    throw DataError(io::location(path, 1) + ": expected manifest header 'video_id,pattern_id,name:category,...'");
  FeatureMatrix m;
  for (std::size_t i = 2; i < header.size(); ++i) {
    const auto col = io::trim(header[i]);
    const auto colon = col.rfind(':');
    if (colon == std::string_view::npos) throw DataError(io::location(path, 1) + ": column without category");
    m.columns.push_back({std::string(col.substr(0, colon)), parse_category(std::string(col.substr(colon + 1)))});
  }
  std::vector<double> vals;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    const auto where = io::location(path, i + 1);
    const auto f = io::split(lines[i], ',');
    if (f.size() != header.size()) throw DataError(where + ": wrong number of columns");
    m.keys.push_back({std::string(io::trim(f[0])), static_cast<int>(io::parse_int(f[1], where))});
    for (std::size_t c = 2; c < f.size(); ++c) {
      const double v = io::parse_double(f[c], where);
      if (!std::isfinite(v)) throw DataError(where + ": non-finite feature value");
      vals.push_back(v);
    }
  }
  m.values = Matrix(m.keys.size(), m.columns.size());
  m.values.values() = std::move(vals);
  return m;
}

std::uint64_t manifest_hash(std::span<const Column> columns) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& c : columns) {
    mix(c.name);
    mix(":");
    mix(to_string(c.category));
    mix(",");
  }
  return h;
}

}  // namespace manner::features
