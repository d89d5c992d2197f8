#include "stf2m/meta.hpp"

#include <cmath>
#include <stdexcept>

#include "stf2m/errors.hpp"

namespace stf2m {

using ad::ParamSet;
using ad::Var;

void MetaConfig::validate() const {
  if (!(inner_lr >= 0.0)) throw ConfigError("inner learning rate must be non-negative");
  if (!(outer_lr > 0.0)) throw ConfigError("outer learning rate must be positive");
  if (tasks_per_batch == 0) throw ConfigError("tasks_per_batch must be >= 1");
  if (inner_steps == 0) throw ConfigError("inner_steps must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0) || !(second_moment >= 0.0 && second_moment < 1.0))
    throw ConfigError("moment decay rates must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
}

template <typename T>
ParamSet<T> inner_adapt(const ParamSet<T>& params, const LossFn<T>& support, double step, std::size_t steps,
                        MetaMode mode, double* first_support_loss) {
  if (step < 0.0) throw ParameterError("inner_adapt: step size must be non-negative");
  if (steps == 0) throw ParameterError("inner_adapt: need at least one step");
  const bool first_order = mode == MetaMode::FirstOrder;
  ParamSet<T> current = params;
  for (std::size_t s = 0; s < steps; ++s) {
    const auto out = support(current);
    if (s == 0 && first_support_loss) *first_support_loss = static_cast<double>(out.loss.item());
    if (step == 0.0) break;
    const auto grads = ad::backward(out.loss, current, !first_order);
    current = ad::grad_through_update(current, grads, static_cast<T>(step), first_order);
  }
  return current;
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
Adam<T>::Adam(double lr, double beta1, double beta2, double eps, double weight_decay)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

template <typename T>
ParamSet<T> Adam<T>::step(const ParamSet<T>& params, const ParamSet<T>& grads) {
  if (m_.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.push_back(ad::Matrix<T>::Zero(params[i].rows(), params[i].cols()));
      v_.push_back(ad::Matrix<T>::Zero(params[i].rows(), params[i].cols()));
    }
  }
  ++t_;
  const T b1 = static_cast<T>(beta1_);
  const T b2 = static_cast<T>(beta2_);
  const T c1 = static_cast<T>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
  const T c2 = static_cast<T>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
  const T lr = static_cast<T>(lr_);
  const T eps = static_cast<T>(eps_);
  ParamSet<T> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& theta = params[i].value();
    ad::Matrix<T> g = grads[i].value();
    if (weight_decay_ > 0.0) g += static_cast<T>(weight_decay_) * theta;
    m_[i] = b1 * m_[i] + (T(1) - b1) * g;
    v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
    ad::Matrix<T> update = ((m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps)).matrix();
    out.add(params.name(i), ad::parameter<T>(theta - lr * update));
  }
  return out;
}

template <typename T>
MetaState<T>::MetaState(ParamSet<T> initial, MetaConfig config)
    : params(initial.as_leaves()),
      cfg(config),
      optimizer(config.outer_lr, config.momentum, config.second_moment, config.adam_eps, config.weight_decay) {
  cfg.validate();
}

// ---------------------------------------------------------------------------
// Outer loop

namespace {

template <typename T>
void accumulate(std::vector<ad::Matrix<T>>& sum, const ParamSet<T>& g) {
  if (sum.empty())
    for (std::size_t i = 0; i < g.size(); ++i) sum.push_back(g[i].value());
  else
    for (std::size_t i = 0; i < g.size(); ++i) sum[i] += g[i].value();
}

template <typename T>
ParamSet<T> averaged(const ParamSet<T>& like, std::vector<ad::Matrix<T>>& sum, std::size_t n) {
  ParamSet<T> out;
  const T scale = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < like.size(); ++i) out.add(like.name(i), ad::constant<T>(sum[i] * scale));
  return out;
}

}  // namespace

template <typename T>
std::pair<ParamSet<T>, std::vector<TaskLossRecord>> meta_gradient(const ParamSet<T>& params,
                                                                  const std::vector<TaskObjective<T>>& batch,
                                                                  const MetaConfig& cfg) {
  if (batch.empty()) throw ParameterError("meta_gradient: empty batch");
  std::vector<ad::Matrix<T>> sum;
  std::vector<TaskLossRecord> records;
  for (const auto& task : batch) {
    try {
      TaskLossRecord rec;
      rec.task_id = task.id;
      const auto adapted = inner_adapt(params, task.support, cfg.inner_lr, cfg.inner_steps, cfg.mode, &rec.support_loss);
      const auto q = task.query(adapted);
      rec.query_loss = static_cast<double>(q.loss.item());
      rec.query_accuracy = q.count ? static_cast<double>(q.correct) / static_cast<double>(q.count) : 0.0;
      accumulate(sum, ad::backward(q.loss, params));
      records.push_back(rec);
    } catch (const std::exception& e) {
      throw std::runtime_error("task " + task.id + ": " + e.what());
    }
  }
  return {averaged(params, sum, batch.size()), std::move(records)};
}

template <typename T>
std::vector<TaskLossRecord> outer_step(MetaState<T>& state, const std::vector<TaskObjective<T>>& batch) {
  if (batch.size() != state.cfg.tasks_per_batch)
    throw ParameterError("outer_step: batch has " + std::to_string(batch.size()) + " tasks, expected " +
                         std::to_string(state.cfg.tasks_per_batch));
  auto [grad, records] = meta_gradient(state.params, batch, state.cfg);
  state.params = state.optimizer.step(state.params, grad);
  ++state.step;
  return records;
}

template <typename T>
std::vector<TaskLossRecord> plain_step(MetaState<T>& state, const std::vector<TaskObjective<T>>& batch) {
  if (batch.empty()) throw ParameterError("plain_step: empty batch");
  std::vector<ad::Matrix<T>> sum;
  std::vector<TaskLossRecord> records;
  for (const auto& task : batch) {
    try {
      const auto q = task.query(state.params);
      TaskLossRecord rec;
      rec.task_id = task.id;
      rec.query_loss = static_cast<double>(q.loss.item());
      rec.support_loss = rec.query_loss;
      rec.query_accuracy = q.count ? static_cast<double>(q.correct) / static_cast<double>(q.count) : 0.0;
      accumulate(sum, ad::backward(q.loss, state.params));
      records.push_back(rec);
    } catch (const std::exception& e) {
      throw std::runtime_error("task " + task.id + ": " + e.what());
    }
  }
  state.params = state.optimizer.step(state.params, averaged(state.params, sum, batch.size()));
  ++state.step;
  return records;
}

// ---------------------------------------------------------------------------
// Metrics

Metrics compute_metrics(const std::vector<Prediction>& predictions) {
  Metrics m;
  m.count = predictions.size();
  if (predictions.empty()) return m;
  std::size_t correct = 0;
  std::size_t correct_emotion = 0;
  for (const auto& p : predictions) {
    if (p.truth >= kNumClasses || p.predicted >= kNumClasses) throw ParameterError("compute_metrics: class out of range");
    ++m.confusion[p.truth][p.predicted];
    const auto te = p.truth / kNumIntensities;
    const auto pe = p.predicted / kNumIntensities;
    ++m.confusion_emotion[te][pe];
    correct += p.truth == p.predicted;
    correct_emotion += te == pe;
  }
  const double n = static_cast<double>(predictions.size());
  m.accuracy = static_cast<double>(correct) / n;
  m.accuracy_emotion = static_cast<double>(correct_emotion) / n;

  auto macro = [](const auto& confusion) {
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < confusion.size(); ++c) {
      std::size_t row = 0;
      for (auto v : confusion[c]) row += v;
      if (row == 0) continue;
      sum += static_cast<double>(confusion[c][c]) / static_cast<double>(row);
      ++present;
    }
    return present ? sum / static_cast<double>(present) : 0.0;
  };
  m.macro_recall = macro(m.confusion);
  m.macro_recall_emotion = macro(m.confusion_emotion);
  return m;
}

#define STF2M_INSTANTIATE_META(T)                                                                               \
  template ParamSet<T> inner_adapt<T>(const ParamSet<T>&, const LossFn<T>&, double, std::size_t, MetaMode,     \
                                      double*);                                                                 \
  template class Adam<T>;                                                                                       \
  template struct MetaState<T>;                                                                                 \
  template std::pair<ParamSet<T>, std::vector<TaskLossRecord>> meta_gradient<T>(                                \
      const ParamSet<T>&, const std::vector<TaskObjective<T>>&, const MetaConfig&);                             \
  template std::vector<TaskLossRecord> outer_step<T>(MetaState<T>&, const std::vector<TaskObjective<T>>&);      \
  template std::vector<TaskLossRecord> plain_step<T>(MetaState<T>&, const std::vector<TaskObjective<T>>&);

STF2M_INSTANTIATE_META(double)
STF2M_INSTANTIATE_META(float)

}  // namespace stf2m
