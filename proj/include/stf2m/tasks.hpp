#pragma once

// Multi-modal long videos, their per-emotion views, and few-shot task sampling.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "stf2m/autodiff.hpp"
#include "stf2m/emotion.hpp"

namespace stf2m {

using RowMatrix = ad::Matrix<double>;

inline constexpr std::size_t kVisualDim = 35;
inline constexpr std::size_t kTextDim = 300;
inline constexpr std::size_t kPositionDim = 8;

/// One labeled emotion segment, frames [frame_start, frame_end).
struct LabelSegment {
  EmotionClass label;
  std::size_t frame_start = 0;
  std::size_t frame_end = 0;

  friend bool operator==(const LabelSegment&, const LabelSegment&) = default;
};

/// Per-frame visual features, one text feature row per labeled segment.
struct LongVideo {
  RowMatrix visual;  // T x visual_dim
  RowMatrix text;    // S x text_dim, S == labels.size()
  std::vector<LabelSegment> labels;

  std::size_t frames() const { return static_cast<std::size_t>(visual.rows()); }
  /// Throws DataError when segments overlap, are unordered, empty, or exceed T.
  void validate() const;

  friend bool operator==(const LongVideo& a, const LongVideo& b) {
    return a.labels == b.labels && a.visual == b.visual && a.text == b.text;
  }
};

/// LongVideo container: "STF2MVID" | u32 version | u64 T | u64 S | u32 visual_dim
/// | u32 text_dim | u32 segments | per segment (u32 emotion, u32 intensity,
/// u64 start, u64 end) | visual f64 row-major | text f64 row-major.
std::string encode_video(const LongVideo& v);
LongVideo decode_video(const std::string& bytes);
void save_video(const std::filesystem::path& path, const LongVideo& v);
LongVideo load_video(const std::filesystem::path& path);

enum class Modality : int { Visual = 0, Text = 1 };

/// One modality of a video with the position index of every labeled segment.
struct ModalityStream {
  Modality modality = Modality::Visual;
  RowMatrix features;                // frames (visual) or one row per segment (text)
  std::vector<LabelSegment> labels;  // shared segment boundaries
  std::vector<std::size_t> positions;
};

/// Splits a video into its visual and text streams with identical segment tables.
std::pair<ModalityStream, ModalityStream> segment_modalities(const LongVideo& v);

/// Fixed two-layer perceptron (normalized position, modality flag) -> 16 -> 8.
class PositionEncoder {
 public:
  /// Weights drawn from a fixed seed; identical across runs and builds.
  PositionEncoder();
  PositionEncoder(RowMatrix w1, RowMatrix b1, RowMatrix w2, RowMatrix b2);
  static PositionEncoder zeros();

  /// segment_count must be >= 1.
  std::vector<double> encode(std::size_t position_index, std::size_t segment_count, Modality modality) const;

 private:
  RowMatrix w1_, b1_, w2_, b2_;
};

struct View {
  Modality modality = Modality::Visual;
  RowMatrix frames;                  // frame-aligned features
  std::vector<double> position_code;  // kPositionDim entries
  std::size_t position_index = 0;
  std::size_t segment_count = 1;
  EmotionClass label;
  std::size_t video_id = 0;
};

/// One view per label segment. Text rows are repeated per frame.
std::vector<View> segment_by_labels(const ModalityStream& stream, const PositionEncoder& encoder,
                                    std::size_t video_id = 0);

/// Visual and text views from the same segment.
struct ViewGroup {
  View visual;
  View text;

  const EmotionClass& label() const { return visual.label; }
  std::size_t position_index() const { return visual.position_index; }
};

/// Pairs views sharing a position; throws DataError if the members disagree.
std::vector<ViewGroup> group_views(const std::vector<View>& visual, const std::vector<View>& text);

/// segment_modalities + segment_by_labels + group_views.
std::vector<ViewGroup> build_view_groups(const LongVideo& v, const PositionEncoder& encoder, std::size_t video_id);

struct MetaTask {
  Emotion emotion = Emotion::Angry;
  std::vector<ViewGroup> support;
  std::vector<ViewGroup> query;
  std::uint64_t seed = 0;
};

/// Uniform sampling without replacement of k_support + k_query groups carrying
/// `emotion`. Throws DataError when the pool is too small.
MetaTask sample_task(const std::vector<ViewGroup>& pool, Emotion emotion, std::size_t k_support, std::size_t k_query,
                     std::uint64_t seed);

/// Picks the emotion uniformly among those with enough groups, then samples.
MetaTask sample_any_task(const std::vector<ViewGroup>& pool, std::size_t k_support, std::size_t k_query,
                         std::uint64_t seed);

/// Seed mixing for derived streams (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace stf2m
