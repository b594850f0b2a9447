#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "manner/matrix.hpp"

namespace manner::signal {

/// Sampled multichannel sequence, N samples by C channels. Immutable once
/// constructed; the constructor enforces every invariant.
class MultichannelSignal {
 public:
  MultichannelSignal(Matrix samples, double sample_rate_hz, std::vector<std::string> channel_names);

  const Matrix& samples() const noexcept { return samples_; }
  double sample_rate_hz() const noexcept { return sample_rate_hz_; }
  const std::vector<std::string>& channel_names() const noexcept { return channel_names_; }
  std::size_t length() const noexcept { return samples_.rows(); }
  std::size_t channels() const noexcept { return samples_.cols(); }

 private:
  Matrix samples_;
  double sample_rate_hz_;
  std::vector<std::string> channel_names_;
};

/// Skeleton layout: 20 joints, three consecutive channels (x, y, z) each.
struct JointLayout {
  std::vector<std::string> joint_names;
  std::size_t reference_joint = 0;
  std::vector<std::size_t> tracked_joints;

  /// Kinect v1 skeleton order; reference is the hip centre, tracked joints
  /// are elbows, wrists, knees and ankles.
  static JointLayout kinect_v1();
  void validate() const;
  std::size_t channel_of(std::size_t joint) const { return 3 * joint; }
};

enum class TokenKind { word, filler, pause };

struct Token {
  std::string text;
  double start_s = 0.0;
  double end_s = 0.0;
  TokenKind kind = TokenKind::word;
};

struct AlignedTranscript {
  std::vector<Token> tokens;
  void validate() const;
};

struct ProsodyFrame {
  double t_s = 0.0;
  double loudness = 0.0;
  std::optional<double> pitch_hz;
  std::optional<double> f1_hz;
  std::optional<double> f2_hz;
  std::optional<double> f3_hz;
  bool voiced = false;
};

struct ProsodyTrack {
  std::vector<ProsodyFrame> frames;
  void validate() const;
};

inline constexpr std::size_t kFaceLandmarks = 66;

struct FaceFrame {
  double t_s = 0.0;
  std::array<std::array<double, 2>, kFaceLandmarks> landmarks{};
  double pitch = 0.0;
  double yaw = 0.0;
  double roll = 0.0;
};

struct FaceTrack {
  std::vector<FaceFrame> frames;
  void validate() const;
};

enum class AnnotationSource { self, crowd_average, crowd };

struct AnnotationRecord {
  std::string video_id;
  int pattern_id = 0;
  int rating = 0;
  AnnotationSource source = AnnotationSource::self;
};

/// Category name -> word stems. A stem ending in '*' matches by prefix.
struct CategoryLexicon {
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> stems;

  std::size_t size() const noexcept { return names.size(); }
  void validate() const;
  CategoryLexicon subset(std::span<const std::size_t> keep) const;
};

std::string to_string(TokenKind kind);
std::string to_string(AnnotationSource source);
AnnotationSource parse_source(const std::string& tag);

MultichannelSignal load_signal(const std::filesystem::path& path);
/// Writes with 17 significant digits so a reload is bit-exact.
void write_signal(const MultichannelSignal& sig, std::ostream& out);
void save_signal(const MultichannelSignal& sig, const std::filesystem::path& path);

AlignedTranscript load_transcript(const std::filesystem::path& path);
ProsodyTrack load_prosody(const std::filesystem::path& path);
FaceTrack load_face(const std::filesystem::path& path);
CategoryLexicon load_lexicon(const std::filesystem::path& path);

/// Annotations CSV: header `video_id,pattern_id,rating,source`. Rows tagged
/// `crowd` are individual worker ratings; see aggregate_crowd_ratings.
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);

/// Mean of the ratings rounded half-up, clamped to 1..7.
int quantize_crowd_ratings(std::span<const int> ratings);

/// Replaces every group of `crowd` rows sharing (video_id, pattern_id) by one
/// `crowd_average` row holding the quantized mean. Other rows pass through.
std::vector<AnnotationRecord> aggregate_crowd_ratings(std::vector<AnnotationRecord> records);

}  // namespace manner::signal
