#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "stf2m/encoder.hpp"
#include "stf2m/errors.hpp"
#include "stf2m/meta.hpp"
#include "stf2m/synth.hpp"

using namespace stf2m;
using ad::ParamSet;
using ad::Var;

namespace {

using M = ad::Matrix<double>;

ParamSet<double> scalar_params(double theta) {
  ParamSet<double> p;
  p.add("theta", ad::parameter<double>(M::Constant(1, 1, theta)));
  return p;
}

LossFn<double> square() {
  return [](const ParamSet<double>& p) { return LossOutput<double>{ad::mul(p[0], p[0]), 0, 1}; };
}

MetaConfig scalar_config(double alpha, MetaMode mode) {
  MetaConfig c;
  c.inner_lr = alpha;
  c.tasks_per_batch = 1;
  c.mode = mode;
  return c;
}

M random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Softmax regression task over random features.
struct ProbeTask {
  M xs, xq;
  std::vector<std::size_t> ys, yq;

  static LossOutput<double> eval(const ParamSet<double>& p, const M& x, const std::vector<std::size_t>& y) {
    const auto lp = ad::log_softmax(ad::add_row(ad::matmul(ad::constant<double>(x), p[0]), p[1]));
    return {task_loss(lp, y), 0, y.size()};
  }
  TaskObjective<double> objective(std::string id) const {
    return {std::move(id), [this](const ParamSet<double>& p) { return eval(p, xs, ys); },
            [this](const ParamSet<double>& p) { return eval(p, xq, yq); }};
  }
};

std::vector<ProbeTask> probe_tasks(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> label(0, 17);
  std::vector<ProbeTask> out(n);
  for (auto& t : out) {
    t.xs = random_matrix(6, 5, rng);
    t.xq = random_matrix(6, 5, rng);
    for (int i = 0; i < 6; ++i) {
      t.ys.push_back(label(rng));
      t.yq.push_back(label(rng));
    }
  }
  return out;
}

ParamSet<double> probe_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamSet<double> p;
  p.add("w", ad::parameter<double>(M(0.3 * random_matrix(5, 18, rng))));
  p.add("b", ad::parameter<double>(M::Zero(1, 18)));
  return p;
}

}  // namespace

TEST(TaskLoss, Examples) {
  M perfect = M::Constant(2, 18, -1e3);
  perfect(0, 3) = perfect(1, 11) = 0.0;
  EXPECT_NEAR(task_loss(ad::log_softmax(ad::constant<double>(perfect)), {3, 11}).item(), 0.0, 1e-12);
  EXPECT_NEAR(task_loss(ad::log_softmax(ad::constant<double>(M::Zero(3, 18))), {0, 1, 2}).item(), std::log(18.0),
              1e-14);
  EXPECT_NEAR(std::log(18.0), 2.890, 5e-4);

  std::mt19937_64 rng(1);
  const M logits = random_matrix(5, 18, rng);
  const std::vector<std::size_t> y = {0, 17, 4, 4, 9};
  double direct = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double lse = std::log(logits.row(i).array().exp().sum());
    direct -= logits(i, y[i]) - lse;
  }
  EXPECT_NEAR(task_loss(ad::log_softmax(ad::constant<double>(logits)), y).item(), direct / 5.0, 1e-12);
}

TEST(InnerAdapt, ScalarOracle) {
  for (double alpha : {0.0, 0.1, 0.35}) {
    for (auto mode : {MetaMode::SecondOrder, MetaMode::FirstOrder}) {
      const auto p = scalar_params(1.5);
      double first = -1.0;
      const auto a = inner_adapt(p, square(), alpha, 1, mode, &first);
      EXPECT_NEAR(a[0].item(), 1.5 * (1 - 2 * alpha), 1e-15);
      EXPECT_DOUBLE_EQ(first, 2.25);
    }
  }
  const auto p = scalar_params(0.8);
  EXPECT_EQ(inner_adapt(p, square(), 0.0, 3, MetaMode::SecondOrder)[0].item(), 0.8);
  EXPECT_NEAR(inner_adapt(p, square(), 0.1, 3, MetaMode::SecondOrder)[0].item(), 0.8 * std::pow(0.8, 3), 1e-15);
  EXPECT_THROW(inner_adapt(p, square(), -0.1, 1, MetaMode::SecondOrder), ParameterError);
  EXPECT_THROW(inner_adapt(p, square(), 0.1, 0, MetaMode::SecondOrder), ParameterError);
}

TEST(InnerAdapt, SmallStepDescends) {
  const auto task = probe_tasks(1, 3)[0];
  const auto obj = task.objective("t");
  const auto p = probe_params(4);
  const double before = obj.support(p).loss.item();
  const auto adapted = inner_adapt(p, obj.support, 1e-3, 1, MetaMode::SecondOrder);
  EXPECT_LT(obj.support(adapted).loss.item(), before);
}

TEST(MetaGradient, ScalarBiLevelOracle) {
  for (double theta : {1.0, -2.0}) {
    for (double alpha : {0.1, 0.2}) {
      const std::vector<TaskObjective<double>> batch = {{"s", square(), square()}};
      const auto [g2, rec] = meta_gradient(scalar_params(theta), batch, scalar_config(alpha, MetaMode::SecondOrder));
      EXPECT_NEAR(g2[0].item(), 2 * theta * std::pow(1 - 2 * alpha, 2), 1e-10);
      const auto [g1, rec1] = meta_gradient(scalar_params(theta), batch, scalar_config(alpha, MetaMode::FirstOrder));
      EXPECT_NEAR(g1[0].item(), 2 * theta * (1 - 2 * alpha), 1e-10);
      ASSERT_EQ(rec.size(), 1u);
      EXPECT_EQ(rec[0].task_id, "s");
      EXPECT_DOUBLE_EQ(rec[0].support_loss, theta * theta);
      EXPECT_NEAR(rec[0].query_loss, std::pow(theta * (1 - 2 * alpha), 2), 1e-14);
    }
  }
  const std::vector<TaskObjective<double>> batch = {{"s", square(), square()}};
  EXPECT_NEAR(meta_gradient(scalar_params(1.0), batch, scalar_config(0.1, MetaMode::SecondOrder)).first[0].item(), 1.28,
              1e-10);
  EXPECT_NEAR(meta_gradient(scalar_params(1.0), batch, scalar_config(0.1, MetaMode::FirstOrder)).first[0].item(), 1.6,
              1e-10);
}

TEST(MetaGradient, BatchIsMeanOfTasks) {
  const auto tasks = probe_tasks(3, 5);
  const auto p = probe_params(6);
  MetaConfig cfg;
  cfg.tasks_per_batch = 3;
  std::vector<TaskObjective<double>> batch;
  for (std::size_t i = 0; i < tasks.size(); ++i) batch.push_back(tasks[i].objective("t" + std::to_string(i)));
  const auto whole = meta_gradient(p, batch, cfg).first;
  std::vector<M> sum(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) sum[i] = M::Zero(p[i].rows(), p[i].cols());
  for (const auto& t : batch) {
    const auto g = meta_gradient(p, {t}, cfg).first;
    for (std::size_t i = 0; i < p.size(); ++i) sum[i] += g[i].value();
  }
  for (std::size_t i = 0; i < p.size(); ++i)
    EXPECT_LT((whole[i].value() - sum[i] / 3.0).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(MetaGradient, LinearInnerLossModesAgree) {
  std::mt19937_64 rng(7);
  const M a = random_matrix(5, 18, rng);
  const LossFn<double> linear = [&](const ParamSet<double>& p) {
    return LossOutput<double>{ad::add(ad::sum_all(ad::mul(p[0], ad::constant<double>(a))), ad::sum_all(p[1])), 0, 1};
  };
  const auto task = probe_tasks(1, 8)[0];
  const std::vector<TaskObjective<double>> batch = {
      {"lin", linear, [&](const ParamSet<double>& p) { return ProbeTask::eval(p, task.xq, task.yq); }}};
  const auto p = probe_params(9);
  MetaConfig cfg;
  cfg.tasks_per_batch = 1;
  const auto g2 = meta_gradient(p, batch, cfg).first;
  cfg.mode = MetaMode::FirstOrder;
  const auto g1 = meta_gradient(p, batch, cfg).first;
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(g1[i].value(), g2[i].value());
}

TEST(MetaGradient, TaskFailureNamesTask) {
  const LossFn<double> bad = [](const ParamSet<double>&) -> LossOutput<double> { throw DataError("broken data"); };
  const std::vector<TaskObjective<double>> batch = {{"ok", square(), square()}, {"task-7", bad, bad}};
  MetaConfig cfg;
  cfg.tasks_per_batch = 2;
  try {
    meta_gradient(scalar_params(1.0), batch, cfg);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("task-7"), std::string::npos);
  }
}

TEST(OuterStep, BatchSizeEnforced) {
  MetaState<double> state(scalar_params(1.0), scalar_config(0.1, MetaMode::SecondOrder));
  const std::vector<TaskObjective<double>> two = {{"a", square(), square()}, {"b", square(), square()}};
  EXPECT_THROW(outer_step(state, two), ParameterError);
}

TEST(OuterStep, ZeroGradientLeavesParams) {
  auto cfg = scalar_config(0.2, MetaMode::SecondOrder);
  cfg.weight_decay = 0.0;
  const LossFn<double> flat = [](const ParamSet<double>& p) {
    return LossOutput<double>{ad::add(ad::affine(ad::sum_all(p[0]), 0.0), ad::scalar<double>(1.0)), 0, 1};
  };
  MetaState<double> state(scalar_params(0.7), cfg);
  for (int i = 0; i < 3; ++i) outer_step(state, {{"flat", flat, flat}});
  EXPECT_EQ(state.params[0].item(), 0.7);
  EXPECT_EQ(state.step, 3u);
}

TEST(OuterStep, AdamFirstStepMovesByLearningRate) {
  auto cfg = scalar_config(0.1, MetaMode::SecondOrder);
  cfg.weight_decay = 0.0;
  MetaState<double> state(scalar_params(1.0), cfg);
  const auto rec = outer_step(state, {{"s", square(), square()}});
  // Bias-corrected first Adam step is lr * g / (|g| + eps).
  EXPECT_NEAR(state.params[0].item(), 1.0 - 0.01 * 1.28 / (1.28 + 1e-8), 1e-12);
  EXPECT_NEAR(rec[0].query_loss, 0.64, 1e-14);
}

TEST(OuterStep, ZeroInnerRateEqualsPlainTraining) {
  const auto tasks = probe_tasks(8, 10);
  MetaConfig cfg;
  cfg.inner_lr = 0.0;
  cfg.tasks_per_batch = 2;
  MetaState<double> meta(probe_params(11), cfg), plain(probe_params(11), cfg);
  for (std::size_t s = 0; s < 10; ++s) {
    std::vector<TaskObjective<double>> batch = {tasks[(2 * s) % 8].objective("a"),
                                                tasks[(2 * s + 1) % 8].objective("b")};
    outer_step(meta, batch);
    plain_step(plain, batch);
    for (std::size_t i = 0; i < meta.params.size(); ++i) ASSERT_EQ(meta.params[i].value(), plain.params[i].value());
  }
}

TEST(OuterStep, SeededTrajectoryIsBitIdentical) {
  const auto tasks = probe_tasks(4, 12);
  auto run = [&] {
    MetaConfig cfg;
    cfg.tasks_per_batch = 2;
    MetaState<double> state(probe_params(13), cfg);
    for (std::size_t s = 0; s < 5; ++s) outer_step(state, {tasks[s % 4].objective("a"), tasks[(s + 1) % 4].objective("b")});
    return state.params.flatten();
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
}

TEST(OuterStep, MetaTrainingReducesQueryLoss) {
  // Tasks share structure: labels are a fixed function of the features.
  std::mt19937_64 rng(14);
  const M truth = random_matrix(5, 18, rng);
  std::vector<ProbeTask> tasks(20);
  for (auto& t : tasks) {
    t.xs = random_matrix(8, 5, rng);
    t.xq = random_matrix(8, 5, rng);
    for (int i = 0; i < 8; ++i) {
      Eigen::Index a, b;
      (t.xs.row(i) * truth).maxCoeff(&a);
      (t.xq.row(i) * truth).maxCoeff(&b);
      t.ys.push_back(static_cast<std::size_t>(a));
      t.yq.push_back(static_cast<std::size_t>(b));
    }
  }
  MetaConfig cfg;
  cfg.outer_lr = 0.05;
  MetaState<double> state(probe_params(15), cfg);
  double first = 0.0, last = 0.0;
  for (std::size_t s = 0; s < 150; ++s) {
    std::vector<TaskObjective<double>> batch;
    for (std::size_t i = 0; i < 4; ++i) batch.push_back(tasks[(4 * s + i) % 20].objective("t"));
    const auto rec = outer_step(state, batch);
    double q = 0.0;
    for (const auto& r : rec) q += r.query_loss / 4.0;
    if (s < 20) first += q / 20.0;
    if (s >= 130) last += q / 20.0;
  }
  EXPECT_LT(last, first);
}

TEST(Metrics, PerfectAndConstant) {
  std::vector<Prediction> perfect, constant;
  for (std::size_t c = 0; c < kNumClasses; ++c)
    for (int k = 0; k < 3; ++k) {
      perfect.push_back({c, c});
      constant.push_back({c, 5});
    }
  const auto m = compute_metrics(perfect);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.macro_recall, 1.0);
  for (std::size_t i = 0; i < kNumClasses; ++i)
    for (std::size_t j = 0; j < kNumClasses; ++j) EXPECT_EQ(m.confusion[i][j], i == j ? 3u : 0u);
  const auto k = compute_metrics(constant);
  EXPECT_NEAR(k.accuracy, 1.0 / 18.0, 1e-15);
  EXPECT_NEAR(k.macro_recall, 1.0 / 18.0, 1e-15);
  EXPECT_NEAR(k.accuracy_emotion, 1.0 / 6.0, 1e-15);
  EXPECT_THROW(compute_metrics({{18, 0}}), ParameterError);
}

TEST(Metrics, CollapsedNeverBelowFine) {
  std::mt19937_64 rng(16);
  std::uniform_int_distribution<std::size_t> cls(0, 17), len(1, 60);
  for (int it = 0; it < 300; ++it) {
    std::vector<Prediction> ps(len(rng));
    for (auto& p : ps) {
      p.truth = cls(rng);
      p.predicted = rng() % 3 == 0 ? p.truth : cls(rng);
    }
    const auto m = compute_metrics(ps);
    EXPECT_GE(m.accuracy_emotion, m.accuracy);
    std::size_t rows = 0;
    for (const auto& r : m.confusion)
      for (auto v : r) rows += v;
    EXPECT_EQ(rows, ps.size());
    std::size_t correct = 0;
    for (const auto& p : ps) correct += p.truth == p.predicted;
    EXPECT_DOUBLE_EQ(m.accuracy, static_cast<double>(correct) / ps.size());
  }
}

TEST(Config, Validation) {
  MetaConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_DOUBLE_EQ(c.inner_lr, 0.2);
  EXPECT_DOUBLE_EQ(c.outer_lr, 0.01);
  EXPECT_EQ(c.tasks_per_batch, 4u);
  EXPECT_EQ(c.inner_steps, 1u);
  c.outer_lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.inner_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.inner_lr = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}
