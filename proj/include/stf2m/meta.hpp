#pragma once

// Bi-level meta-optimization: per-task adaptation on the support set, then an
// outer adaptive-moment update on the mean query loss of the adapted models.

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stf2m/autodiff.hpp"
#include "stf2m/emotion.hpp"

namespace stf2m {

enum class MetaMode { SecondOrder, FirstOrder };

struct MetaConfig {
  double inner_lr = 0.2;       // alpha
  double outer_lr = 0.01;      // beta
  std::size_t tasks_per_batch = 4;
  std::size_t inner_steps = 1;
  MetaMode mode = MetaMode::SecondOrder;
  double momentum = 0.9;       // first-moment decay
  double second_moment = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;

  /// Throws ConfigError for non-positive rates or zero steps.
  void validate() const;
};

template <typename T>
struct LossOutput {
  ad::Var<T> loss;
  std::size_t correct = 0;
  std::size_t count = 0;
};

template <typename T>
using LossFn = std::function<LossOutput<T>(const ad::ParamSet<T>&)>;

/// The two losses of one task, closed over its data.
template <typename T>
struct TaskObjective {
  std::string id;
  LossFn<T> support;
  LossFn<T> query;
};

struct TaskLossRecord {
  std::string task_id;
  double support_loss = 0.0;
  double query_loss = 0.0;
  double query_accuracy = 0.0;
};

/// `steps` gradient steps of size `step` on the support loss. In second-order
/// mode the steps stay differentiable. step == 0 returns params unchanged.
template <typename T>
ad::ParamSet<T> inner_adapt(const ad::ParamSet<T>& params, const LossFn<T>& support, double step, std::size_t steps,
                            MetaMode mode, double* first_support_loss = nullptr);

/// Adaptive-moment optimizer with L2 weight decay folded into the gradient.
template <typename T>
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps, double weight_decay);
  /// New trainable leaves after one update.
  ad::ParamSet<T> step(const ad::ParamSet<T>& params, const ad::ParamSet<T>& grads);
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  std::vector<ad::Matrix<T>> m_, v_;
};

template <typename T>
struct MetaState {
  ad::ParamSet<T> params;
  MetaConfig cfg;
  Adam<T> optimizer;
  std::size_t step = 0;

  MetaState(ad::ParamSet<T> initial, MetaConfig config);
};

/// (1/N) sum_i grad_theta L_query(adapt_i(theta)) with per-task records.
template <typename T>
std::pair<ad::ParamSet<T>, std::vector<TaskLossRecord>> meta_gradient(const ad::ParamSet<T>& params,
                                                                      const std::vector<TaskObjective<T>>& batch,
                                                                      const MetaConfig& cfg);

/// One outer update. Requires batch.size() == cfg.tasks_per_batch; a failing
/// task aborts the step with its id in the message.
template <typename T>
std::vector<TaskLossRecord> outer_step(MetaState<T>& state, const std::vector<TaskObjective<T>>& batch);

/// Single-level update on the mean query loss at theta (no adaptation).
template <typename T>
std::vector<TaskLossRecord> plain_step(MetaState<T>& state, const std::vector<TaskObjective<T>>& batch);

// ---------------------------------------------------------------------------
// Metrics

struct Prediction {
  std::size_t truth = 0;
  std::size_t predicted = 0;
};

struct Metrics {
  double accuracy = 0.0;          // 18-way
  double accuracy_emotion = 0.0;  // 6-way, intensity collapsed
  double macro_recall = 0.0;      // 18-way, over classes present in the truth
  double macro_recall_emotion = 0.0;
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};  // [truth][predicted]
  std::array<std::array<std::size_t, kNumEmotions>, kNumEmotions> confusion_emotion{};
  std::size_t count = 0;
};

Metrics compute_metrics(const std::vector<Prediction>& predictions);

}  // namespace stf2m
