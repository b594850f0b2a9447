#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "manner/matrix.hpp"
#include "manner/signal.hpp"

namespace manner::features {

enum class Category { disfluency, prosody, body, face, lexical };

inline constexpr std::size_t kDisfluencyCount = 9;
inline constexpr std::size_t kProsodyCount = 26;
inline constexpr std::size_t kBodyCount = 40;
inline constexpr std::size_t kFaceCount = 24;
inline constexpr std::size_t kLexicalCount = 23;
inline constexpr std::size_t kFeatureCount =
    kDisfluencyCount + kProsodyCount + kBodyCount + kFaceCount + kLexicalCount;

std::string to_string(Category c);
Category parse_category(const std::string& s);

struct Column {
  std::string name;
  Category category;
  friend bool operator==(const Column&, const Column&) = default;
};

/// Half-open time interval [start_s, end_s).
struct Window {
  double start_s = 0.0;
  double end_s = 0.0;
  bool contains(double t) const noexcept { return t >= start_s && t < end_s; }
};

/// Landmark index pairs for the nine facial distances and the two landmark
/// groups whose centroids define the inter-eye distance.
struct FaceMap {
  struct Pair {
    std::string name;
    std::size_t a = 0;
    std::size_t b = 0;
  };
  std::array<Pair, 9> distances;
  std::vector<std::size_t> left_eye;
  std::vector<std::size_t> right_eye;

  /// 66-point layout: brows 17-26, eyes 36-47, mouth corners 48 and 54.
  static FaceMap default_66();
  static FaceMap from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

/// Column names and categories in row order. Lexical names come from the
/// lexicon, so the row width is 99 + lexicon size.
std::vector<Column> column_manifest(const signal::CategoryLexicon& lexicon);

// Each family pools every sample of every window into one multiset; a window
// listed twice contributes its samples twice.

std::array<double, kDisfluencyCount> disfluency_features(const signal::AlignedTranscript& transcript,
                                                         std::span<const Window> windows);
std::array<double, kProsodyCount> prosody_features(const signal::ProsodyTrack& track, std::span<const Window> windows);
std::array<double, kBodyCount> body_features(const signal::MultichannelSignal& sig, const signal::JointLayout& layout,
                                             std::span<const Window> windows);
std::array<double, kFaceCount> face_features(const signal::FaceTrack& track, std::span<const Window> windows,
                                             const FaceMap& face_map);
std::vector<double> lexical_features(const signal::AlignedTranscript& transcript,
                                     const signal::CategoryLexicon& lexicon, std::span<const Window> windows);

/// True when `word` (already lowercased) matches `stem`.
bool stem_matches(std::string_view stem, std::string_view word);

struct VideoTracks {
  const signal::MultichannelSignal& skeleton;
  const signal::AlignedTranscript& transcript;
  const signal::ProsodyTrack& prosody;
  const signal::FaceTrack& face;
};

/// One feature row for one pattern, pooling all of its occurrence windows.
std::vector<double> assemble_pattern_row(const VideoTracks& tracks, const signal::JointLayout& layout,
                                         const FaceMap& face_map, const signal::CategoryLexicon& lexicon,
                                         std::span<const Window> windows);

struct RowKey {
  std::string video_id;
  int pattern_id = 0;
  friend auto operator<=>(const RowKey&, const RowKey&) = default;
};

struct FeatureMatrix {
  std::vector<Column> columns;
  std::vector<RowKey> keys;
  Matrix values;

  std::size_t rows() const noexcept { return values.rows(); }
  std::vector<Category> categories() const;
  FeatureMatrix select_rows(std::span<const std::size_t> idx) const;
  FeatureMatrix select_columns(std::span<const std::size_t> idx) const;
};

struct ZScoreParams {
  std::vector<double> means;
  std::vector<double> stds;  // 0 marks a constant column, which maps to 0

  static ZScoreParams fit(const Matrix& m);
  Matrix apply(const Matrix& m) const;
  nlohmann::json to_json() const;
  static ZScoreParams from_json(const nlohmann::json& j);
};

/// Population z-score per column; needs at least two rows.
std::pair<FeatureMatrix, ZScoreParams> zscore_normalize(const FeatureMatrix& m);

/// CSV whose header is the manifest: `video_id,pattern_id,name:category,...`.
std::string to_csv(const FeatureMatrix& m);
FeatureMatrix load_feature_matrix(const std::filesystem::path& path);

/// FNV-1a over the `name:category` manifest; guards model/matrix schema drift.
std::uint64_t manifest_hash(std::span<const Column> columns);

}  // namespace manner::features
