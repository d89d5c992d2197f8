#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// Every op records a node whose backward rule is itself written in terms of
// recorded ops, so gradients can be differentiated again (grad-of-grad). With
// create_graph == false the backward rules run with recording disabled and
// produce constants.
//
// Only float and double are instantiated.

#include <Eigen/Core>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace stf2m::ad {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
class Var;

template <typename T>
struct Node {
  using BackwardFn = std::function<std::vector<Var<T>>(const Var<T>& self, const Var<T>& grad)>;

  Matrix<T> value;
  std::vector<Var<T>> inputs;
  BackwardFn backward;  // one entry per input; a null Var means "no gradient"
  bool requires_grad = false;
  const char* op = "leaf";
};

/// Handle to a recorded value. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Matrix<T>& value() const { return node_->value; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  Eigen::Index size() const { return node_->value.size(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  const char* op() const { return node_->op; }
  /// Value of a 1x1 tensor.
  T item() const;

  const Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }
  const Var<T>& input(std::size_t i) const { return node_->inputs[i]; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Disables recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

std::string shape_string(Eigen::Index rows, Eigen::Index cols);

// --- leaves ---------------------------------------------------------------
template <typename T>
Var<T> constant(Matrix<T> value);
template <typename T>
Var<T> parameter(Matrix<T> value);
template <typename T>
Var<T> zeros(Eigen::Index rows, Eigen::Index cols);
template <typename T>
Var<T> scalar(T value);
/// Same value, no history.
template <typename T>
Var<T> detach(const Var<T>& a);

// --- linear algebra -------------------------------------------------------
/// op(a) * op(b) where op transposes when the flag is set.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_a = false, bool transpose_b = false);

// --- elementwise ----------------------------------------------------------
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
/// scale * a + shift
template <typename T>
Var<T> affine(const Var<T>& a, T scale, T shift = T(0));
template <typename T>
Var<T> sigmoid(const Var<T>& a);
template <typename T>
Var<T> tanh(const Var<T>& a);
template <typename T>
Var<T> relu(const Var<T>& a);
template <typename T>
Var<T> exp(const Var<T>& a);
template <typename T>
Var<T> log(const Var<T>& a);
template <typename T>
Var<T> reciprocal(const Var<T>& a);

// --- broadcasting and reductions -------------------------------------------
/// a (n x m) + row (1 x m) on every row.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row);
/// a (n x m) scaled row-wise by col (n x 1).
template <typename T>
Var<T> mul_col(const Var<T>& a, const Var<T>& col);
/// Column sums: n x m -> 1 x m.
template <typename T>
Var<T> sum_rows(const Var<T>& a);
/// Row sums: n x m -> n x 1.
template <typename T>
Var<T> sum_cols(const Var<T>& a);
template <typename T>
Var<T> broadcast_rows(const Var<T>& row, Eigen::Index n);
template <typename T>
Var<T> broadcast_cols(const Var<T>& col, Eigen::Index m);
template <typename T>
Var<T> sum_all(const Var<T>& a);
template <typename T>
Var<T> mean_all(const Var<T>& a);

/// Row-wise log-softmax.
template <typename T>
Var<T> log_softmax(const Var<T>& a);
/// Row-wise softmax.
template <typename T>
Var<T> softmax(const Var<T>& a);

// --- structural -----------------------------------------------------------
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_cols(const Var<T>& a, Eigen::Index start, Eigen::Index count);
/// Embeds a into zero columns [start, start + a.cols()) of a total-wide matrix.
template <typename T>
Var<T> pad_cols(const Var<T>& a, Eigen::Index start, Eigen::Index total);
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_rows(const Var<T>& a, Eigen::Index start, Eigen::Index count);
template <typename T>
Var<T> pad_rows(const Var<T>& a, Eigen::Index start, Eigen::Index total);
template <typename T>
Var<T> gather_rows(const Var<T>& a, const std::vector<Eigen::Index>& index);
/// Adjoint of gather_rows: out[index[i]] += a[i].
template <typename T>
Var<T> scatter_add_rows(const Var<T>& a, const std::vector<Eigen::Index>& index, Eigen::Index rows);

// --- temporal convolution -------------------------------------------------
/// Sliding windows of `width` consecutive rows inside each segment of x
/// (segments are stacked vertically with the given lengths). A segment of
/// length L yields L - width + 1 rows of width * x.cols() entries.
template <typename T>
Var<T> unfold(const Var<T>& x, const std::vector<Eigen::Index>& lengths, Eigen::Index width);
/// Adjoint of unfold.
template <typename T>
Var<T> fold(const Var<T>& windows, const std::vector<Eigen::Index>& lengths, Eigen::Index width,
            Eigen::Index channels);
/// Valid-padding 1-D convolution: x (T x Cin), kernel (width*Cin x Cout).
template <typename T>
Var<T> conv1d_valid(const Var<T>& x, const Var<T>& kernel, Eigen::Index width);

// --- differentiation ------------------------------------------------------
/// d output / d inputs for a scalar output. Inputs the output does not depend
/// on get exact zeros. With create_graph the returned gradients are recorded
/// and can be differentiated again.
template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs, bool create_graph = false);

// --- parameter sets -------------------------------------------------------

/// Ordered, uniquely named tensors.
template <typename T>
class ParamSet {
 public:
  void add(std::string name, Var<T> v);
  std::size_t size() const noexcept { return vars_.size(); }
  bool contains(const std::string& name) const;
  const Var<T>& operator[](std::size_t i) const { return vars_[i]; }
  const Var<T>& get(const std::string& name) const;
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::vector<Var<T>>& vars() const noexcept { return vars_; }

  /// Total scalar count.
  std::size_t numel() const;
  /// Concatenated row-major values in declaration order.
  std::vector<T> flatten() const;
  /// Fresh trainable leaves with the same names and shapes.
  ParamSet<T> unflatten(const std::vector<T>& flat) const;
  /// Fresh trainable leaves holding the current values.
  ParamSet<T> as_leaves() const;
  /// Constants holding the current values.
  ParamSet<T> detached() const;

 private:
  std::vector<std::string> names_;
  std::vector<Var<T>> vars_;
};

/// Gradient of a scalar loss for every tensor of params, same names.
template <typename T>
ParamSet<T> backward(const Var<T>& loss, const ParamSet<T>& params, bool create_graph = false);

/// params - step * grads. In second-order mode the update stays on the graph so a
/// later backward reaches through the gradients; first_order detaches them.
/// Throws ParameterError for step < 0.
template <typename T>
ParamSet<T> grad_through_update(const ParamSet<T>& params, const ParamSet<T>& grads, T step,
                                bool first_order = false);

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Central differences on every coordinate of params. Relative error is
/// |g_ad - g_fd| / max(floor, |g_ad| + |g_fd|); the floor keeps round-off in
/// g_fd from dominating coordinates whose gradient is near zero.
/// Throws ParameterError for eps <= 0 or floor <= 0.
template <typename T>
FiniteDiffReport finite_diff_check(const std::function<Var<T>(const ParamSet<T>&)>& loss_fn,
                                   const ParamSet<T>& params, double eps, double floor = 1e-8);

}  // namespace stf2m::ad
