#pragma once

// Shared encoder g (modality projection, gated temporal convolution, spatial
// message passing), fuzzy semantic injection F, and the 18-way classifier h.

#include <cstdint>
#include <span>
#include <vector>

#include "stf2m/autodiff.hpp"
#include "stf2m/fuzzy.hpp"
#include "stf2m/tasks.hpp"

namespace stf2m {

struct EncoderConfig {
  std::size_t dim = 64;            // embedding channels d
  std::size_t kernel_width = 3;    // K_t
  std::size_t temporal_layers = 2; // L_t
  std::size_t visual_dim = kVisualDim;
  std::size_t text_dim = kTextDim;
  bool use_fuzzy = true;
  bool use_spatial = true;
  bool use_temporal = true;
  /// Scale every embedding row to unit L2 norm before the heads.
  bool normalize_embedding = true;
  /// Weight of the squared error between the FCIS head and the labeled class
  /// prototype. Only active with use_fuzzy.
  double coding_weight = 1.0;

  /// Frames a view needs: L_t * (K_t - 1) + 1.
  std::size_t min_frames() const { return temporal_layers * (kernel_width - 1) + 1; }
  void validate() const;
};

/// Binary adjacency over the views of one task set and its normalized form
/// D^-1/2 (A + I) D^-1/2. Node i < G is the visual view of group i, node G + i
/// its text view.
struct TaskGraph {
  RowMatrix adjacency;
  RowMatrix normalized;
};

/// Cross-modal edge inside every group; same-modality edge between groups
/// whose position indices differ by one.
TaskGraph build_adjacency(std::span<const ViewGroup> groups);
TaskGraph normalize_adjacency(const RowMatrix& adjacency);

/// Constant inputs for one support or query set.
template <typename T>
struct TaskInputs {
  ad::Var<T> visual;  // stacked visual frames with position codes
  ad::Var<T> text;    // stacked text frames with position codes
  std::vector<Eigen::Index> lengths;  // visual views then text views
  ad::Var<T> graph;   // normalized adjacency
  std::vector<std::size_t> labels;      // per node, class index
  ad::Var<T> label_onehot;              // N x 18
  ad::Var<T> target_coding;             // N x 12
  std::size_t nodes() const { return labels.size(); }
};

template <typename T>
TaskInputs<T> prepare_inputs(std::span<const ViewGroup> groups, const fuzzy::RuleBank& bank,
                             const EncoderConfig& cfg);

template <typename T>
struct ForwardResult {
  ad::Var<T> log_probs;   // N x 18
  ad::Var<T> head;        // N x 12 FCIS head output
  ad::Var<T> embedding;   // N x d after spatial message passing
  RowMatrix semantic;     // N x 12 fuzzy semantic rows (no gradient)
};

/// Gated linear unit over each segment: (X*W1 + b1) . sigmoid(X*W2 + b2),
/// valid padding. Returns the stacked outputs and shrinks lengths in place.
template <typename T>
ad::Var<T> temporal_layer(const ad::Var<T>& x, std::vector<Eigen::Index>& lengths, const ad::Var<T>& value_w,
                          const ad::Var<T>& value_b, const ad::Var<T>& gate_w, const ad::Var<T>& gate_b,
                          Eigen::Index width);

/// Mean over the time steps of every segment: (sum lengths) x d -> segments x d.
template <typename T>
ad::Var<T> segment_mean(const ad::Var<T>& x, const std::vector<Eigen::Index>& lengths);

/// x_i / sqrt(|x_i|^2 + eps), row by row.
template <typename T>
ad::Var<T> normalize_rows(const ad::Var<T>& x, T eps = T(1e-6));

/// relu(A_hat Z W_s).
template <typename T>
ad::Var<T> spatial_conv(const ad::Var<T>& z, const ad::Var<T>& normalized_adjacency, const ad::Var<T>& weight);

template <typename T>
class Encoder {
 public:
  Encoder(EncoderConfig cfg, fuzzy::RuleBank bank, fuzzy::FuzzyConfig fuzzy_cfg);

  const EncoderConfig& config() const noexcept { return cfg_; }
  const fuzzy::FuzzyConfig& fuzzy_config() const noexcept { return fuzzy_cfg_; }
  void set_fuzzy_config(const fuzzy::FuzzyConfig& f);
  const fuzzy::RuleBank& bank() const noexcept { return bank_; }

  /// Seeded initialization of every tensor.
  ad::ParamSet<T> init_params(std::uint64_t seed) const;

  TaskInputs<T> prepare(std::span<const ViewGroup> groups) const { return prepare_inputs<T>(groups, bank_, cfg_); }

  /// When frozen_semantic is given it replaces the fuzzy rows; gradient
  /// checks use this to hold the non-differentiable branch fixed.
  ForwardResult<T> forward(const ad::ParamSet<T>& params, const TaskInputs<T>& in,
                           const RowMatrix* frozen_semantic = nullptr) const;

  /// Negative log-likelihood plus the weighted coding error.
  ad::Var<T> loss(const ForwardResult<T>& out, const TaskInputs<T>& in) const;

 private:
  EncoderConfig cfg_;
  fuzzy::RuleBank bank_;
  fuzzy::FuzzyConfig fuzzy_cfg_;
};

/// Mean negative log-probability of the true class. Throws ParameterError for
/// labels outside [0, 18).
template <typename T>
ad::Var<T> task_loss(const ad::Var<T>& log_probs, const std::vector<std::size_t>& labels);

/// Row argmax with ties to the lowest class index.
template <typename T>
std::vector<std::size_t> predict(const ad::Var<T>& log_probs);

}  // namespace stf2m
