#pragma once

// Run configuration and the train / evaluate pipeline behind the command line.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stf2m/encoder.hpp"
#include "stf2m/meta.hpp"
#include "stf2m/synth.hpp"

namespace stf2m {

/// Flat key = value run configuration. Unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  int precision = 64;

  // fuzzy
  double lambda1 = 0.4;
  double lambda2 = 0.4;
  std::string rules_path;   // empty: built-in bank
  std::string curves_path;  // empty: built-in curves

  // meta
  double inner_lr = 0.2;
  double outer_lr = 0.01;
  std::size_t tasks_per_batch = 4;
  std::size_t inner_steps = 1;
  MetaMode mode = MetaMode::SecondOrder;
  std::size_t k_support = 5;
  std::size_t k_query = 5;
  std::size_t outer_steps = 2000;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t eval_tasks_per_emotion = 10;

  // encoder
  std::size_t dim = 64;
  std::size_t kernel_width = 3;
  std::size_t temporal_layers = 2;
  double coding_weight = 1.0;
  bool use_fuzzy = true;
  bool use_spatial = true;
  bool use_temporal = true;
  bool use_meta = true;
  bool normalize_embedding = true;

  // benchmark
  std::size_t frames_per_segment = 24;
  double sigma = 0.1;
  double ramp_min = 0.3;
  double ramp_max = 1.0;
  std::size_t segments_per_video = 6;
  std::size_t train_videos = 60;
  std::size_t val_videos = 12;
  std::size_t test_videos = 30;
  std::string bench_noise = "none";
  double bench_noise_level = 0.0;

  /// Throws ConfigError for an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  /// Throws ConfigError for out-of-range combinations.
  void validate() const;
  /// Every key in a fixed order; parse(to_text()) reproduces the config.
  std::string to_text() const;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  EncoderConfig encoder() const;
  MetaConfig meta() const;
  fuzzy::FuzzyConfig fuzzy() const;
  BenchmarkConfig benchmark() const;
  fuzzy::RuleBank rule_bank() const;
  fuzzy::IntensityCurves intensity_curves() const;
};

/// View groups of every video of one split, optionally corrupted first. Noise
/// seeds derive from `noise.seed` and each video's generator seed.
std::vector<ViewGroup> build_pool(const Benchmark& b, Split split, const std::optional<NoiseSpec>& noise = {});

struct EvalResult {
  std::vector<Prediction> predictions;
  Metrics metrics;
};

struct TrainLogLine {
  std::size_t step = 0;
  double support_loss = 0.0;
  double query_loss = 0.0;
  double query_accuracy = 0.0;
  double wall_ms = 0.0;

  std::string format() const;
};

template <typename T>
class Pipeline {
 public:
  explicit Pipeline(const RunConfig& cfg);

  const RunConfig& config() const noexcept { return cfg_; }
  Encoder<T>& encoder() noexcept { return encoder_; }
  const Encoder<T>& encoder() const noexcept { return encoder_; }

  ad::ParamSet<T> initial_params() const;

  /// Support and query objectives of one task.
  TaskObjective<T> objective(const MetaTask& task, std::string id) const;

  /// Meta-training tasks for one outer step.
  std::vector<MetaTask> training_batch(const std::vector<ViewGroup>& pool, std::size_t step) const;

  using StepCallback = std::function<void(const TrainLogLine&, const ad::ParamSet<T>&)>;
  /// `steps` outer updates from `init`; the callback sees every step.
  ad::ParamSet<T> train(const ad::ParamSet<T>& init, const std::vector<ViewGroup>& pool, std::size_t steps,
                        const StepCallback& on_step = {}) const;

  /// The fixed evaluation task list: eval_tasks_per_emotion tasks per emotion.
  std::vector<MetaTask> evaluation_tasks(const std::vector<ViewGroup>& pool) const;

  /// Adapts on each task's support set and predicts every query view.
  EvalResult evaluate(const ad::ParamSet<T>& params, const std::vector<MetaTask>& tasks) const;

 private:
  RunConfig cfg_;
  Encoder<T> encoder_;
  MetaConfig meta_;
};

// ---------------------------------------------------------------------------
// Report files

std::string metrics_csv(const Metrics& m);
std::string confusion_csv(const Metrics& m, bool collapsed);
std::string predictions_csv(const std::vector<Prediction>& p);

/// Parses predictions_csv output.
std::vector<Prediction> parse_predictions_csv(std::string_view text);

}  // namespace stf2m
