#pragma once

// Synthetic multi-modal emotion videos built from the rule prototypes, plus
// feature-level fog, mask and distortion injectors.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stf2m/fuzzy.hpp"
#include "stf2m/tasks.hpp"

namespace stf2m {

struct GeneratorConfig {
  std::size_t frames_per_segment = 24;
  double sigma = 0.1;
  double ramp_min = 0.3;  // fraction of the segment spent ramping to the prototype
  double ramp_max = 1.0;
  std::size_t segments_per_video = 6;

  /// Throws ConfigError unless 0 < ramp_min <= ramp_max <= 1 and sigma >= 0.
  void validate() const;
};

/// Fixed random linear maps coding (12) -> visual (35) and one-hot (18) -> text (300).
struct FeatureLifts {
  RowMatrix visual;
  RowMatrix text;

  static FeatureLifts make(std::uint64_t seed);
};

/// Optional per-segment record of what the generator drew.
struct SegmentTrace {
  double ramp_fraction = 0.0;
  std::size_t ramp_frames = 0;
  RowMatrix coding;  // frames x 12, noise included
};

/// Throws DataError for a class without a prototype in `bank`.
LongVideo generate_video(const std::vector<EmotionClass>& labels, const fuzzy::RuleBank& bank,
                         const FeatureLifts& lifts, const GeneratorConfig& cfg, std::uint64_t seed,
                         std::vector<SegmentTrace>* trace = nullptr);

enum class NoiseKind { Fog, Mask, Distortion };

const char* to_string(NoiseKind k);
NoiseKind parse_noise_kind(const std::string& s);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::Mask;
  double level = 0.0;
  std::uint64_t seed = 0;

  /// strict: level in {0, 0.1, 0.3, 0.5}; otherwise any level in [0, 1].
  void validate(bool strict = false) const;
};

/// A contiguous window of ceil(p*T) frames is zeroed; each segment touching it
/// loses its text row with probability p.
LongVideo inject_mask(const LongVideo& v, double p, std::uint64_t seed);
/// x <- (1-p) x + p mean(x), per feature over the whole video.
LongVideo inject_fog(const LongVideo& v, double p, std::uint64_t seed);
/// x <- x + p * gamma * tanh(x), gamma ~ U[-1, 1] per feature.
LongVideo inject_distortion(const LongVideo& v, double p, std::uint64_t seed);
LongVideo apply_noise(const LongVideo& v, const NoiseSpec& spec);

// ---------------------------------------------------------------------------
// Benchmark splits

enum class Split { Train, Val, Test };
const char* to_string(Split s);

struct BenchmarkConfig {
  GeneratorConfig generator;
  std::size_t train_videos = 60;
  std::size_t val_videos = 12;
  std::size_t test_videos = 30;
  std::uint64_t seed = 0;
  /// Applied to every generated video, each with its own derived seed.
  std::optional<NoiseSpec> noise;
};

struct BenchmarkVideo {
  Split split = Split::Train;
  std::uint64_t seed = 0;
  std::string path;  // relative to the benchmark directory
  LongVideo video;
};

struct Benchmark {
  std::vector<BenchmarkVideo> videos;
  std::vector<const BenchmarkVideo*> split(Split s) const;
};

/// Labels are dealt from independently shuffled decks of all 18 classes, so
/// every split covers every class once it holds at least 18 segments.
Benchmark generate_benchmark(const BenchmarkConfig& cfg, const fuzzy::RuleBank& bank);

/// Writes one container per video plus manifest.tsv (`path<TAB>seed<TAB>labels`).
void write_benchmark(const std::filesystem::path& dir, const Benchmark& b);
Benchmark read_benchmark(const std::filesystem::path& dir);

std::string format_labels(const LongVideo& v);

}  // namespace stf2m
