#include "manner/signal.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "manner/error.hpp"
#include "manner/io_util.hpp"

namespace manner::signal {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

double finite_field(std::string_view field, const std::string& where) {
  const double v = io::parse_double(field, where);
  if (!std::isfinite(v)) throw DataError(where + ": non-finite value '" + std::string(io::trim(field)) + "'");
  return v;
}

std::optional<double> optional_field(std::string_view field, const std::string& where) {
  if (io::trim(field).empty()) return std::nullopt;
  return finite_field(field, where);
}

bool is_blank(const std::string& line) { return io::trim(line).empty(); }

}  // namespace

MultichannelSignal::MultichannelSignal(Matrix samples, double sample_rate_hz,
                                       std::vector<std::string> channel_names)
    : samples_(std::move(samples)),
      sample_rate_hz_(sample_rate_hz),
      channel_names_(std::move(channel_names)) {
  if (samples_.rows() < 1) throw DataError("signal has no samples");
  if (samples_.cols() < 1) throw DataError("signal has no channels");
  if (!(sample_rate_hz_ > 0.0) || !std::isfinite(sample_rate_hz_))
    throw DataError("sample rate must be positive and finite");
  if (channel_names_.size() != samples_.cols())
    throw DataError("channel name count " + std::to_string(channel_names_.size()) +
                    " does not match channel count " + std::to_string(samples_.cols()));
  for (double v : samples_.values())
    if (!std::isfinite(v)) throw DataError("signal contains a non-finite value");
}

JointLayout JointLayout::kinect_v1() {
  JointLayout layout;
  layout.joint_names = {"hip_center",     "spine",       "shoulder_center", "head",
                        "shoulder_left",  "elbow_left",  "wrist_left",      "hand_left",
                        "shoulder_right", "elbow_right", "wrist_right",     "hand_right",
                        "hip_left",       "knee_left",   "ankle_left",      "foot_left",
                        "hip_right",      "knee_right",  "ankle_right",     "foot_right"};
  layout.reference_joint = 0;
  layout.tracked_joints = {5, 6, 9, 10, 13, 14, 17, 18};
  return layout;
}

void JointLayout::validate() const {
  const auto n = joint_names.size();
  if (n == 0) throw DataError("joint layout has no joints");
  if (reference_joint >= n) throw DataError("reference joint index out of range");
  std::vector<std::size_t> sorted = tracked_joints;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw DataError("tracked joints must be distinct");
  for (auto j : tracked_joints)
    if (j >= n) throw DataError("tracked joint index out of range");
}

void AlignedTranscript::validate() const {
  double prev_end = -INFINITY;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if (!std::isfinite(t.start_s) || !std::isfinite(t.end_s) || !(t.start_s < t.end_s))
      throw DataError("transcript token " + std::to_string(i) + ": start must precede end");
    if (t.start_s < prev_end)
      throw DataError("transcript token " + std::to_string(i) + ": tokens overlap or are out of order");
    prev_end = t.end_s;
  }
}

void ProsodyTrack::validate() const {
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (i > 0 && !(f.t_s > frames[i - 1].t_s))
      throw DataError("prosody frame " + std::to_string(i) + ": timestamps must strictly increase");
    if (f.voiced != f.pitch_hz.has_value())
      throw DataError("prosody frame " + std::to_string(i) + ": pitch must be present iff voiced");
  }
}

void FaceTrack::validate() const {
  for (std::size_t i = 1; i < frames.size(); ++i)
    if (!(frames[i].t_s > frames[i - 1].t_s))
      throw DataError("face frame " + std::to_string(i) + ": timestamps must strictly increase");
}

void CategoryLexicon::validate() const {
  if (names.empty()) throw DataError("lexicon has no categories");
  if (names.size() != stems.size()) throw DataError("lexicon names/stems size mismatch");
  for (std::size_t i = 0; i < names.size(); ++i) {
    for (const auto& s : stems[i]) {
      if (s.empty() || s == "*") throw DataError("lexicon category '" + names[i] + "' has an empty stem");
      if (s != lower(s)) throw DataError("lexicon stem '" + s + "' is not lowercase");
    }
  }
}

CategoryLexicon CategoryLexicon::subset(std::span<const std::size_t> keep) const {
  CategoryLexicon out;
  for (auto k : keep) {
    out.names.push_back(names.at(k));
    out.stems.push_back(stems.at(k));
  }
  return out;
}

std::string to_string(TokenKind kind) {
  switch (kind) {
    case TokenKind::word: return "word";
    case TokenKind::filler: return "filler";
    case TokenKind::pause: return "pause";
  }
  return "word";
}

std::string to_string(AnnotationSource source) {
  switch (source) {
    case AnnotationSource::self: return "self";
    case AnnotationSource::crowd_average: return "crowd_average";
    case AnnotationSource::crowd: return "crowd";
  }
  return "self";
}

AnnotationSource parse_source(const std::string& tag) {
  if (tag == "self") return AnnotationSource::self;
  if (tag == "crowd_average") return AnnotationSource::crowd_average;
  if (tag == "crowd") return AnnotationSource::crowd;
  throw DataError("unknown annotation source '" + tag + "'");
}

MultichannelSignal load_signal(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty()) throw DataError(path.string() + ": empty signal file");
  const auto header = io::trim(lines[0]);
  constexpr std::string_view key = "sample_rate_hz=";
  if (header.substr(0, key.size()) != key)
    throw DataError(io::location(path, 1) + ": expected 'sample_rate_hz=<float>'");
  const double rate = io::parse_double(header.substr(key.size()), io::location(path, 1));
  if (!(rate > 0.0) || !std::isfinite(rate))
    throw DataError(io::location(path, 1) + ": sample rate must be positive");
  if (lines.size() < 2) throw DataError(path.string() + ": missing channel-name line");

  std::vector<std::string> names;
  for (auto f : io::split(lines[1], ',')) names.emplace_back(io::trim(f));
  const std::size_t channels = names.size();

  std::vector<double> values;
  std::size_t rows = 0;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    const auto where = io::location(path, i + 1);
    const auto fields = io::split(lines[i], ',');
    if (fields.size() != channels)
      throw DataError(where + ": malformed row, expected " + std::to_string(channels) + " values, got " +
                      std::to_string(fields.size()));
    for (auto f : fields) values.push_back(finite_field(f, where));
    ++rows;
  }
  if (rows == 0) throw DataError(path.string() + ": signal has no samples");
  Matrix m(rows, channels);
  m.values() = std::move(values);
  return MultichannelSignal(std::move(m), rate, std::move(names));
}

void write_signal(const MultichannelSignal& sig, std::ostream& out) {
  out << "sample_rate_hz=" << io::format_double(sig.sample_rate_hz()) << '\n';
  const auto& names = sig.channel_names();
  for (std::size_t c = 0; c < names.size(); ++c) out << (c ? "," : "") << names[c];
  out << '\n';
  const auto& s = sig.samples();
  for (std::size_t n = 0; n < s.rows(); ++n) {
    for (std::size_t c = 0; c < s.cols(); ++c) out << (c ? "," : "") << io::format_double(s(n, c));
    out << '\n';
  }
}

void save_signal(const MultichannelSignal& sig, const std::filesystem::path& path) {
  std::ostringstream ss;
  write_signal(sig, ss);
  io::write_file_atomic(path, ss.str());
}

AlignedTranscript load_transcript(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  AlignedTranscript tr;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    const auto where = io::location(path, i + 1);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": invalid JSON: " + e.what());
    }
    try {
      Token t;
      t.text = j.at("text").get<std::string>();
      t.start_s = j.at("start_s").get<double>();
      t.end_s = j.at("end_s").get<double>();
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "word") t.kind = TokenKind::word;
      else if (kind == "filler") t.kind = TokenKind::filler;
      else if (kind == "pause") t.kind = TokenKind::pause;
      else throw DataError(where + ": unknown token kind '" + kind + "'");
      tr.tokens.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  tr.validate();
  return tr;
}

ProsodyTrack load_prosody(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty()) throw DataError(path.string() + ": empty prosody file");
  ProsodyTrack track;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    const auto where = io::location(path, i + 1);
    const auto f = io::split(lines[i], ',');
    if (f.size() != 7) throw DataError(where + ": expected 7 prosody columns");
    ProsodyFrame fr;
    fr.t_s = finite_field(f[0], where);
    fr.loudness = finite_field(f[1], where);
    fr.pitch_hz = optional_field(f[2], where);
    fr.f1_hz = optional_field(f[3], where);
    fr.f2_hz = optional_field(f[4], where);
    fr.f3_hz = optional_field(f[5], where);
    const auto voiced = io::parse_int(f[6], where);
    if (voiced != 0 && voiced != 1) throw DataError(where + ": voiced must be 0 or 1");
    fr.voiced = voiced == 1;
    track.frames.push_back(fr);
  }
  track.validate();
  return track;
}

FaceTrack load_face(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty()) throw DataError(path.string() + ": empty face file");
  constexpr std::size_t kCols = 1 + 2 * kFaceLandmarks + 3;
  FaceTrack track;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    const auto where = io::location(path, i + 1);
    const auto f = io::split(lines[i], ',');
    if (f.size() != kCols)
      throw DataError(where + ": expected " + std::to_string(kCols) + " face columns, got " + std::to_string(f.size()));
    FaceFrame fr;
    fr.t_s = finite_field(f[0], where);
    for (std::size_t k = 0; k < kFaceLandmarks; ++k) {
      fr.landmarks[k][0] = finite_field(f[1 + 2 * k], where);
      fr.landmarks[k][1] = finite_field(f[2 + 2 * k], where);
    }
    fr.pitch = finite_field(f[kCols - 3], where);
    fr.yaw = finite_field(f[kCols - 2], where);
    fr.roll = finite_field(f[kCols - 1], where);
    track.frames.push_back(fr);
  }
  track.validate();
  return track;
}

CategoryLexicon load_lexicon(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  CategoryLexicon lex;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = io::trim(lines[i]);
    if (line.empty() || line.front() == '#') continue;
    const auto colon = line.find(':');
    const auto where = io::location(path, i + 1);
    if (colon == std::string_view::npos) throw DataError(where + ": expected 'category: stems...'");
    const auto name = io::trim(line.substr(0, colon));
    if (name.empty()) throw DataError(where + ": empty category name");
    std::vector<std::string> stems;
    std::istringstream rest{std::string(line.substr(colon + 1))};
    std::string stem;
    while (rest >> stem) stems.push_back(lower(stem));
    lex.names.emplace_back(name);
    lex.stems.push_back(std::move(stems));
  }
  lex.validate();
  return lex;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  std::vector<AnnotationRecord> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    const auto f = io::split(lines[i], ',');
    if (i == 0 && io::trim(f[0]) == "video_id") continue;
    const auto where = io::location(path, i + 1);
    if (f.size() != 4) throw DataError(where + ": expected video_id,pattern_id,rating,source");
    AnnotationRecord r;
    r.video_id = std::string(io::trim(f[0]));
    r.pattern_id = static_cast<int>(io::parse_int(f[1], where));
    const auto rating = io::parse_int(f[2], where);
    if (rating < 1 || rating > 7)
      throw DataError(where + ": rating " + std::to_string(rating) + " outside 1..7");
    r.rating = static_cast<int>(rating);
    try {
      r.source = parse_source(std::string(io::trim(f[3])));
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

int quantize_crowd_ratings(std::span<const int> ratings) {
  if (ratings.empty()) throw DataError("cannot quantize an empty rating list");
  long long sum = 0;
  for (int r : ratings) {
    if (r < 1 || r > 7) throw DataError("rating " + std::to_string(r) + " outside 1..7");
    sum += r;
  }
  const auto n = static_cast<long long>(ratings.size());
  // floor(sum/n + 1/2) in integers; all operands are positive.
  const auto q = (2 * sum + n) / (2 * n);
  return static_cast<int>(std::clamp<long long>(q, 1, 7));
}

std::vector<AnnotationRecord> aggregate_crowd_ratings(std::vector<AnnotationRecord> records) {
  std::map<std::pair<std::string, int>, std::vector<int>> groups;
  std::vector<AnnotationRecord> out;
  for (auto& r : records) {
    if (r.source == AnnotationSource::crowd)
      groups[{r.video_id, r.pattern_id}].push_back(r.rating);
    else
      out.push_back(std::move(r));
  }
  for (const auto& [key, ratings] : groups)
    out.push_back({key.first, key.second, quantize_crowd_ratings(ratings), AnnotationSource::crowd_average});
  return out;
}

}  // namespace manner::signal
