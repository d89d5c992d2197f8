#include "stf2m/encoder.hpp"

#include <cmath>
#include <random>

#include "stf2m/errors.hpp"

namespace stf2m {

using ad::Var;

void EncoderConfig::validate() const {
  if (dim == 0) throw ConfigError("encoder dim must be positive");
  if (kernel_width == 0) throw ConfigError("kernel_width must be positive");
  if (coding_weight < 0.0) throw ConfigError("coding_weight must be non-negative");
  if (visual_dim == 0 || text_dim == 0) throw ConfigError("feature dims must be positive");
}

// ---------------------------------------------------------------------------
// Task graph

TaskGraph normalize_adjacency(const RowMatrix& adjacency) {
  const auto n = adjacency.rows();
  if (adjacency.cols() != n) throw ShapeError("adjacency must be square");
  RowMatrix with_loops = adjacency + RowMatrix::Identity(n, n);
  Eigen::VectorXd inv_sqrt = with_loops.rowwise().sum().array().rsqrt();
  TaskGraph g;
  g.adjacency = adjacency;
  g.normalized = inv_sqrt.asDiagonal() * with_loops * inv_sqrt.asDiagonal();
  return g;
}

TaskGraph build_adjacency(std::span<const ViewGroup> groups) {
  const auto count = static_cast<Eigen::Index>(groups.size());
  RowMatrix a = RowMatrix::Zero(2 * count, 2 * count);
  for (Eigen::Index i = 0; i < count; ++i) {
    a(i, count + i) = a(count + i, i) = 1.0;
    for (Eigen::Index j = 0; j < count; ++j) {
      const auto pi = groups[static_cast<std::size_t>(i)].position_index();
      const auto pj = groups[static_cast<std::size_t>(j)].position_index();
      if (pi + 1 == pj || pj + 1 == pi) {
        a(i, j) = a(j, i) = 1.0;
        a(count + i, count + j) = a(count + j, count + i) = 1.0;
      }
    }
  }
  return normalize_adjacency(a);
}

// ---------------------------------------------------------------------------
// Inputs

namespace {

template <typename T>
ad::Matrix<T> stack_views(std::span<const ViewGroup> groups, Modality m, std::size_t feature_dim,
                          std::vector<Eigen::Index>& lengths) {
  Eigen::Index rows = 0;
  for (const auto& g : groups) rows += (m == Modality::Visual ? g.visual : g.text).frames.rows();
  const auto width = static_cast<Eigen::Index>(feature_dim + kPositionDim);
  ad::Matrix<T> out(rows, width);
  Eigen::Index off = 0;
  for (const auto& g : groups) {
    const View& v = m == Modality::Visual ? g.visual : g.text;
    if (static_cast<std::size_t>(v.frames.cols()) != feature_dim)
      throw DataError("view feature width " + std::to_string(v.frames.cols()) + " != expected " +
                      std::to_string(feature_dim));
    const auto len = v.frames.rows();
    out.block(off, 0, len, v.frames.cols()) = v.frames.template cast<T>();
    for (std::size_t k = 0; k < kPositionDim; ++k)
      out.col(static_cast<Eigen::Index>(feature_dim + k)).segment(off, len).setConstant(static_cast<T>(v.position_code[k]));
    lengths.push_back(len);
    off += len;
  }
  return out;
}

template <typename T>
ad::Matrix<T> to_matrix(const RowMatrix& m) {
  return m.template cast<T>();
}

}  // namespace

template <typename T>
TaskInputs<T> prepare_inputs(std::span<const ViewGroup> groups, const fuzzy::RuleBank& bank,
                             const EncoderConfig& cfg) {
  if (groups.empty()) throw DataError("task set has no view groups");
  TaskInputs<T> in;
  in.visual = ad::constant<T>(stack_views<T>(groups, Modality::Visual, cfg.visual_dim, in.lengths));
  in.text = ad::constant<T>(stack_views<T>(groups, Modality::Text, cfg.text_dim, in.lengths));
  for (auto len : in.lengths)
    if (cfg.use_temporal && static_cast<std::size_t>(len) < cfg.min_frames())
      throw DataError("view has " + std::to_string(len) + " frames; temporal convolution needs at least " +
                      std::to_string(cfg.min_frames()));
  in.graph = ad::constant<T>(to_matrix<T>(build_adjacency(groups).normalized));
  const auto n = static_cast<Eigen::Index>(2 * groups.size());
  ad::Matrix<T> onehot = ad::Matrix<T>::Zero(n, static_cast<Eigen::Index>(kNumClasses));
  ad::Matrix<T> target(n, static_cast<Eigen::Index>(fuzzy::kNumComponents));
  in.labels.resize(static_cast<std::size_t>(n));
  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto node = m * groups.size() + g;
      const auto& label = groups[g].label();
      in.labels[node] = label.index();
      onehot(static_cast<Eigen::Index>(node), static_cast<Eigen::Index>(label.index())) = T(1);
      const auto& rules = bank.rules_for(label);
      if (rules.empty()) throw DataError("rule bank has no prototype for " + class_name(label));
      const auto& proto = bank.rules()[rules.front()].prototype;
      for (std::size_t j = 0; j < fuzzy::kNumComponents; ++j)
        target(static_cast<Eigen::Index>(node), static_cast<Eigen::Index>(j)) = static_cast<T>(proto[j]);
    }
  }
  in.label_onehot = ad::constant<T>(std::move(onehot));
  in.target_coding = ad::constant<T>(std::move(target));
  return in;
}

// ---------------------------------------------------------------------------
// Building blocks

template <typename T>
Var<T> temporal_layer(const Var<T>& x, std::vector<Eigen::Index>& lengths, const Var<T>& value_w,
                      const Var<T>& value_b, const Var<T>& gate_w, const Var<T>& gate_b, Eigen::Index width) {
  const auto windows = ad::unfold(x, lengths, width);
  const auto value = ad::add_row(ad::matmul(windows, value_w), value_b);
  const auto gate = ad::sigmoid(ad::add_row(ad::matmul(windows, gate_w), gate_b));
  for (auto& len : lengths) len -= width - 1;
  return ad::mul(value, gate);
}

template <typename T>
Var<T> segment_mean(const Var<T>& x, const std::vector<Eigen::Index>& lengths) {
  Eigen::Index total = 0;
  for (auto len : lengths) total += len;
  if (total != x.rows()) throw ShapeError("segment_mean: lengths do not cover the input rows");
  ad::Matrix<T> pool = ad::Matrix<T>::Zero(static_cast<Eigen::Index>(lengths.size()), total);
  Eigen::Index off = 0;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    pool.row(static_cast<Eigen::Index>(s)).segment(off, lengths[s]).setConstant(T(1) / static_cast<T>(lengths[s]));
    off += lengths[s];
  }
  return ad::matmul(ad::constant<T>(std::move(pool)), x);
}

template <typename T>
Var<T> normalize_rows(const Var<T>& x, T eps) {
  const auto sq = ad::affine(ad::sum_cols(ad::mul(x, x)), T(1), eps);
  return ad::mul_col(x, ad::exp(ad::affine(ad::log(sq), T(-0.5))));
}

template <typename T>
Var<T> spatial_conv(const Var<T>& z, const Var<T>& normalized_adjacency, const Var<T>& weight) {
  return ad::relu(ad::matmul(ad::matmul(normalized_adjacency, z), weight));
}

template <typename T>
Var<T> task_loss(const Var<T>& log_probs, const std::vector<std::size_t>& labels) {
  if (static_cast<std::size_t>(log_probs.rows()) != labels.size())
    throw ShapeError("task_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(log_probs.rows()) + " rows");
  if (labels.empty()) throw ParameterError("task_loss: no labels");
  ad::Matrix<T> onehot = ad::Matrix<T>::Zero(log_probs.rows(), log_probs.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= static_cast<std::size_t>(log_probs.cols()))
      throw ParameterError("task_loss: label " + std::to_string(labels[i]) + " outside [0, " +
                           std::to_string(log_probs.cols()) + ")");
    onehot(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i])) = T(1);
  }
  const T scale = T(-1) / static_cast<T>(labels.size());
  return ad::affine(ad::sum_all(ad::mul(log_probs, ad::constant<T>(std::move(onehot)))), scale);
}

template <typename T>
std::vector<std::size_t> predict(const Var<T>& log_probs) {
  std::vector<std::size_t> out(static_cast<std::size_t>(log_probs.rows()));
  for (Eigen::Index i = 0; i < log_probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < log_probs.cols(); ++c)
      if (log_probs.value()(i, c) > log_probs.value()(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoder

template <typename T>
Encoder<T>::Encoder(EncoderConfig cfg, fuzzy::RuleBank bank, fuzzy::FuzzyConfig fuzzy_cfg)
    : cfg_(cfg), bank_(std::move(bank)), fuzzy_cfg_(fuzzy_cfg) {
  cfg_.validate();
  fuzzy_cfg_.validate();
}

template <typename T>
void Encoder<T>::set_fuzzy_config(const fuzzy::FuzzyConfig& f) {
  f.validate();
  fuzzy_cfg_ = f;
}

template <typename T>
ad::ParamSet<T> Encoder<T>::init_params(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  auto xavier = [&](std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    ad::Matrix<T> m(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(u(rng));
    return ad::parameter<T>(std::move(m));
  };
  auto zero_row = [](std::size_t n) { return ad::parameter<T>(ad::Matrix<T>::Zero(1, static_cast<Eigen::Index>(n))); };

  const auto d = cfg_.dim;
  const auto k = cfg_.kernel_width;
  ad::ParamSet<T> p;
  p.add("proj_visual.weight", xavier(cfg_.visual_dim + kPositionDim, d));
  p.add("proj_visual.bias", zero_row(d));
  p.add("proj_text.weight", xavier(cfg_.text_dim + kPositionDim, d));
  p.add("proj_text.bias", zero_row(d));
  for (std::size_t l = 0; l < cfg_.temporal_layers; ++l) {
    const auto prefix = "temporal." + std::to_string(l);
    p.add(prefix + ".value.weight", xavier(k * d, d));
    p.add(prefix + ".value.bias", zero_row(d));
    p.add(prefix + ".gate.weight", xavier(k * d, d));
    p.add(prefix + ".gate.bias", zero_row(d));
  }
  p.add("spatial.weight", xavier(d, d));
  p.add("fcis_head.weight", xavier(d, fuzzy::kNumComponents));
  p.add("fcis_head.bias", zero_row(fuzzy::kNumComponents));
  p.add("classifier.weight", xavier(d + fuzzy::kNumComponents, kNumClasses));
  p.add("classifier.bias", zero_row(kNumClasses));
  return p;
}

template <typename T>
ForwardResult<T> Encoder<T>::forward(const ad::ParamSet<T>& p, const TaskInputs<T>& in,
                                     const RowMatrix* frozen_semantic) const {
  const auto visual = ad::add_row(ad::matmul(in.visual, p.get("proj_visual.weight")), p.get("proj_visual.bias"));
  const auto text = ad::add_row(ad::matmul(in.text, p.get("proj_text.weight")), p.get("proj_text.bias"));
  auto h = ad::concat_rows<T>({visual, text});
  auto lengths = in.lengths;
  if (cfg_.use_temporal) {
    const auto width = static_cast<Eigen::Index>(cfg_.kernel_width);
    for (std::size_t l = 0; l < cfg_.temporal_layers; ++l) {
      const auto prefix = "temporal." + std::to_string(l);
      h = temporal_layer(h, lengths, p.get(prefix + ".value.weight"), p.get(prefix + ".value.bias"),
                         p.get(prefix + ".gate.weight"), p.get(prefix + ".gate.bias"), width);
    }
  }
  auto z = segment_mean(h, lengths);
  if (cfg_.use_spatial) z = spatial_conv(z, in.graph, p.get("spatial.weight"));
  if (cfg_.normalize_embedding) z = normalize_rows(z);

  ForwardResult<T> out;
  out.embedding = z;
  out.head = ad::add_row(ad::matmul(z, p.get("fcis_head.weight")), p.get("fcis_head.bias"));

  const auto n = z.rows();
  const auto nc = static_cast<Eigen::Index>(fuzzy::kNumComponents);
  if (frozen_semantic) {
    if (frozen_semantic->rows() != n || frozen_semantic->cols() != nc)
      throw ShapeError("frozen semantic rows have the wrong shape");
    out.semantic = *frozen_semantic;
  } else {
    out.semantic = RowMatrix::Zero(n, nc);
    if (cfg_.use_fuzzy) {
      std::array<double, fuzzy::kNumComponents> u{};
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < nc; ++j) u[static_cast<std::size_t>(j)] = static_cast<double>(out.head.value()(i, j));
        const auto s = fuzzy::infer_semantic_vector(u, bank_, fuzzy_cfg_);
        for (Eigen::Index j = 0; j < nc; ++j) out.semantic(i, j) = s[static_cast<std::size_t>(j)];
      }
    }
  }
  const auto features = ad::concat_cols<T>({z, ad::constant<T>(out.semantic.template cast<T>())});
  const auto logits = ad::add_row(ad::matmul(features, p.get("classifier.weight")), p.get("classifier.bias"));
  out.log_probs = ad::log_softmax(logits);
  return out;
}

template <typename T>
Var<T> Encoder<T>::loss(const ForwardResult<T>& out, const TaskInputs<T>& in) const {
  auto nll = task_loss(out.log_probs, in.labels);
  if (!cfg_.use_fuzzy || cfg_.coding_weight == 0.0) return nll;
  const auto diff = ad::sub(out.head, in.target_coding);
  const auto coding = ad::affine(ad::mean_all(ad::mul(diff, diff)), static_cast<T>(cfg_.coding_weight));
  return ad::add(nll, coding);
}

#define STF2M_INSTANTIATE_ENCODER(T)                                                                            \
  template struct TaskInputs<T>;                                                                                \
  template struct ForwardResult<T>;                                                                             \
  template class Encoder<T>;                                                                                    \
  template TaskInputs<T> prepare_inputs<T>(std::span<const ViewGroup>, const fuzzy::RuleBank&,                  \
                                           const EncoderConfig&);                                              \
  template Var<T> temporal_layer<T>(const Var<T>&, std::vector<Eigen::Index>&, const Var<T>&, const Var<T>&,   \
                                    const Var<T>&, const Var<T>&, Eigen::Index);                                \
  template Var<T> segment_mean<T>(const Var<T>&, const std::vector<Eigen::Index>&);                             \
  template Var<T> normalize_rows<T>(const Var<T>&, T);                                                          \
  template Var<T> spatial_conv<T>(const Var<T>&, const Var<T>&, const Var<T>&);                                 \
  template Var<T> task_loss<T>(const Var<T>&, const std::vector<std::size_t>&);                                 \
  template std::vector<std::size_t> predict<T>(const Var<T>&);

STF2M_INSTANTIATE_ENCODER(double)
STF2M_INSTANTIATE_ENCODER(float)

}  // namespace stf2m
