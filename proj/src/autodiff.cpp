#include "stf2m/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <unordered_map>

#include "stf2m/errors.hpp"

namespace stf2m::ad {
namespace {

thread_local bool g_recording = true;

template <typename T>
void check_finite([[maybe_unused]] const Matrix<T>& v, [[maybe_unused]] const char* op) {
#ifndef NDEBUG
  if (!v.allFinite()) throw std::runtime_error(std::string("non-finite value produced by ") + op);
#endif
}

template <typename T>
Var<T> make(Matrix<T> value, std::vector<Var<T>> inputs, typename Node<T>::BackwardFn backward, const char* op) {
  check_finite(value, op);
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return v.requires_grad(); });
  if (g_recording && any) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

[[noreturn]] void shape_fail(const char* op, Eigen::Index ar, Eigen::Index ac, Eigen::Index br, Eigen::Index bc) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(ar, ac) + " and " +
                   shape_string(br, bc));
}

template <typename T>
void same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail(op, a.rows(), a.cols(), b.rows(), b.cols());
}

template <typename T>
bool wants(const Var<T>& self, std::size_t i) {
  return self.input(i).requires_grad();
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

bool grad_enabled() noexcept { return g_recording; }

std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

template <typename T>
T Var<T>::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_string(rows(), cols()) + " is not a scalar");
  return node_->value(0, 0);
}

// ---------------------------------------------------------------------------
// Leaves

template <typename T>
Var<T> constant(Matrix<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = "constant";
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> parameter(Matrix<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->op = "parameter";
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> zeros(Eigen::Index rows, Eigen::Index cols) {
  return constant<T>(Matrix<T>::Zero(rows, cols));
}

template <typename T>
Var<T> scalar(T value) {
  Matrix<T> m(1, 1);
  m(0, 0) = value;
  return constant<T>(std::move(m));
}

template <typename T>
Var<T> detach(const Var<T>& a) {
  return constant<T>(a.value());
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta, bool tb) {
  const auto ar = ta ? a.cols() : a.rows();
  const auto ac = ta ? a.rows() : a.cols();
  const auto br = tb ? b.cols() : b.rows();
  const auto bc = tb ? b.rows() : b.cols();
  if (ac != br) shape_fail("matmul", ar, ac, br, bc);
  Matrix<T> out(ar, bc);
  if (!ta && !tb)
    out.noalias() = a.value() * b.value();
  else if (ta && !tb)
    out.noalias() = a.value().transpose() * b.value();
  else if (!ta && tb)
    out.noalias() = a.value() * b.value().transpose();
  else
    out.noalias() = a.value().transpose() * b.value().transpose();
  return make<T>(
      std::move(out), {a, b},
      [ta, tb](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
        const auto& A = self.input(0);
        const auto& B = self.input(1);
        Var<T> ga, gb;
        if (!ta && !tb) {
          if (wants(self, 0)) ga = matmul(g, B, false, true);
          if (wants(self, 1)) gb = matmul(A, g, true, false);
        } else if (ta && !tb) {
          if (wants(self, 0)) ga = matmul(B, g, false, true);
          if (wants(self, 1)) gb = matmul(A, g, false, false);
        } else if (!ta && tb) {
          if (wants(self, 0)) ga = matmul(g, B, false, false);
          if (wants(self, 1)) gb = matmul(g, A, true, false);
        } else {
          if (wants(self, 0)) ga = matmul(B, g, true, true);
          if (wants(self, 1)) gb = matmul(g, A, true, true);
        }
        return {ga, gb};
      },
      "matmul");
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  same_shape("add", a, b);
  return make<T>(
      a.value() + b.value(), {a, b},
      [](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> { return {g, g}; }, "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  same_shape("sub", a, b);
  return make<T>(
      a.value() - b.value(), {a, b},
      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
        return {g, wants(self, 1) ? affine(g, T(-1)) : Var<T>{}};
      },
      "sub");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  same_shape("mul", a, b);
  return make<T>(
      a.value().cwiseProduct(b.value()), {a, b},
      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
        Var<T> ga, gb;
        if (wants(self, 0)) ga = mul(g, self.input(1));
        if (wants(self, 1)) gb = mul(g, self.input(0));
        return {ga, gb};
      },
      "mul");
}

template <typename T>
Var<T> affine(const Var<T>& a, T scale, T shift) {
  Matrix<T> out = (a.value().array() * scale + shift).matrix();
  return make<T>(
      std::move(out), {a},
      [scale](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> { return {affine(g, scale)}; }, "affine");
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Matrix<T> out = a.value().unaryExpr([](T x) {
    // Split by sign to avoid overflow in exp.
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  });
  return make<T>(
      std::move(out), {a},
      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
        return {mul(g, mul(self, affine(self, T(-1), T(1))))};
      },
      "sigmoid");
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  Matrix<T> out = a.value().array().tanh().matrix();
  return make<T>(
      std::move(out), {a},
      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
        return {mul(g, affine(mul(self, self), T(-1), T(1)))};
      },
      "tanh");
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Matrix<T> out = a.value().cwiseMax(T(0));
  return make<T>(
      std::move(out), {a},
      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
        Matrix<T> mask = (self.input(0).value().array() > T(0)).template cast<T>().matrix();
        return {mul(g, constant<T>(std::move(mask)))};
      },
      "relu");
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  Matrix<T> out = a.value().array().exp().matrix();
  return make<T>(
      std::move(out), {a}, [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> { return {mul(g, self)}; },
      "exp");
}

template <typename T>
Var<T> log(const Var<T>& a) {
  Matrix<T> out = a.value().array().log().matrix();
  return make<T>(
      std::move(out), {a},
      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
        return {mul(g, reciprocal(self.input(0)))};
      },
      "log");
}

template <typename T>
Var<T> reciprocal(const Var<T>& a) {
  Matrix<T> out = a.value().array().inverse().matrix();
  return make<T>(
      std::move(out), {a},
      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
        return {affine(mul(g, mul(self, self)), T(-1))};
      },
      "reciprocal");
}

// ---------------------------------------------------------------------------
// Broadcasting and reductions

template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_fail("add_row", a.rows(), a.cols(), row.rows(), row.cols());
  Matrix<T> out = a.value().rowwise() + row.value().row(0);
  return make<T>(
      std::move(out), {a, row},
      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
        return {g, wants(self, 1) ? sum_rows(g) : Var<T>{}};
      },
      "add_row");
}

template <typename T>
Var<T> mul_col(const Var<T>& a, const Var<T>& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) shape_fail("mul_col", a.rows(), a.cols(), col.rows(), col.cols());
  Matrix<T> out = col.value().col(0).asDiagonal() * a.value();
  return make<T>(
      std::move(out), {a, col},
      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
        Var<T> ga, gc;
        if (wants(self, 0)) ga = mul_col(g, self.input(1));
        if (wants(self, 1)) gc = sum_cols(mul(g, self.input(0)));
        return {ga, gc};
      },
      "mul_col");
}

template <typename T>
Var<T> sum_rows(const Var<T>& a) {
  Matrix<T> out = a.value().colwise().sum();
  const auto n = a.rows();
  return make<T>(
      std::move(out), {a},
      [n](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> { return {broadcast_rows(g, n)}; }, "sum_rows");
}

template <typename T>
Var<T> sum_cols(const Var<T>& a) {
  Matrix<T> out = a.value().rowwise().sum();
  const auto m = a.cols();
  return make<T>(
      std::move(out), {a},
      [m](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> { return {broadcast_cols(g, m)}; }, "sum_cols");
}

template <typename T>
Var<T> broadcast_rows(const Var<T>& row, Eigen::Index n) {
  if (row.rows() != 1) shape_fail("broadcast_rows", row.rows(), row.cols(), n, row.cols());
  Matrix<T> out = row.value().replicate(n, 1);
  return make<T>(
      std::move(out), {row}, [](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> { return {sum_rows(g)}; },
      "broadcast_rows");
}

template <typename T>
Var<T> broadcast_cols(const Var<T>& col, Eigen::Index m) {
  if (col.cols() != 1) shape_fail("broadcast_cols", col.rows(), col.cols(), col.rows(), m);
  Matrix<T> out = col.value().replicate(1, m);
  return make<T>(
      std::move(out), {col}, [](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> { return {sum_cols(g)}; },
      "broadcast_cols");
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  const auto n = a.rows();
  const auto m = a.cols();
  return make<T>(
      std::move(out), {a},
      [n, m](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
        return {broadcast_cols(broadcast_rows(g, n), m)};
      },
      "sum_all");
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return affine(sum_all(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Var<T> log_softmax(const Var<T>& a) {
  const auto& x = a.value();
  Matrix<T> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const T mx = x.row(i).maxCoeff();
    const T lse = mx + std::log((x.row(i).array() - mx).exp().sum());
    out.row(i) = x.row(i).array() - lse;
  }
  return make<T>(
      std::move(out), {a},
      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
        return {sub(g, mul_col(exp(self), sum_cols(g)))};
      },
      "log_softmax");
}

template <typename T>
Var<T> softmax(const Var<T>& a) {
  return exp(log_softmax(a));
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts[0].rows()) shape_fail("concat_cols", parts[0].rows(), parts[0].cols(), p.rows(), p.cols());
    cols += p.cols();
  }
  Matrix<T> out(parts[0].rows(), cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    offsets.push_back(off);
    off += p.cols();
  }
  return make<T>(
      std::move(out), parts,
      [offsets](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
        std::vector<Var<T>> out(offsets.size());
        for (std::size_t i = 0; i < offsets.size(); ++i)
          if (wants(self, i)) out[i] = slice_cols(g, offsets[i], self.input(i).cols());
        return out;
      },
      "concat_cols");
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols())
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_string(a.rows(), a.cols()));
  Matrix<T> out = a.value().middleCols(start, count);
  const auto total = a.cols();
  return make<T>(
      std::move(out), {a},
      [start, total](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> { return {pad_cols(g, start, total)}; },
      "slice_cols");
}

template <typename T>
Var<T> pad_cols(const Var<T>& a, Eigen::Index start, Eigen::Index total) {
  if (start < 0 || start + a.cols() > total) throw ShapeError("pad_cols: target too narrow");
  Matrix<T> out = Matrix<T>::Zero(a.rows(), total);
  out.middleCols(start, a.cols()) = a.value();
  const auto count = a.cols();
  return make<T>(
      std::move(out), {a},
      [start, count](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> { return {slice_cols(g, start, count)}; },
      "pad_cols");
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts[0].cols()) shape_fail("concat_rows", parts[0].rows(), parts[0].cols(), p.rows(), p.cols());
    rows += p.rows();
  }
  Matrix<T> out(rows, parts[0].cols());
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    offsets.push_back(off);
    off += p.rows();
  }
  return make<T>(
      std::move(out), parts,
      [offsets](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
        std::vector<Var<T>> out(offsets.size());
        for (std::size_t i = 0; i < offsets.size(); ++i)
          if (wants(self, i)) out[i] = slice_rows(g, offsets[i], self.input(i).rows());
        return out;
      },
      "concat_rows");
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows())
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_string(a.rows(), a.cols()));
  Matrix<T> out = a.value().middleRows(start, count);
  const auto total = a.rows();
  return make<T>(
      std::move(out), {a},
      [start, total](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> { return {pad_rows(g, start, total)}; },
      "slice_rows");
}

template <typename T>
Var<T> pad_rows(const Var<T>& a, Eigen::Index start, Eigen::Index total) {
  if (start < 0 || start + a.rows() > total) throw ShapeError("pad_rows: target too short");
  Matrix<T> out = Matrix<T>::Zero(total, a.cols());
  out.middleRows(start, a.rows()) = a.value();
  const auto count = a.rows();
  return make<T>(
      std::move(out), {a},
      [start, count](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> { return {slice_rows(g, start, count)}; },
      "pad_rows");
}

template <typename T>
Var<T> gather_rows(const Var<T>& a, const std::vector<Eigen::Index>& index) {
  Matrix<T> out(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= a.rows())
      throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                       shape_string(a.rows(), a.cols()));
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(index[i]);
  }
  const auto rows = a.rows();
  return make<T>(
      std::move(out), {a},
      [index, rows](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
        return {scatter_add_rows(g, index, rows)};
      },
      "gather_rows");
}

template <typename T>
Var<T> scatter_add_rows(const Var<T>& a, const std::vector<Eigen::Index>& index, Eigen::Index rows) {
  if (static_cast<Eigen::Index>(index.size()) != a.rows()) throw ShapeError("scatter_add_rows: index size mismatch");
  Matrix<T> out = Matrix<T>::Zero(rows, a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= rows) throw ShapeError("scatter_add_rows: index out of range");
    out.row(index[i]) += a.value().row(static_cast<Eigen::Index>(i));
  }
  return make<T>(
      std::move(out), {a},
      [index](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> { return {gather_rows(g, index)}; },
      "scatter_add_rows");
}

// ---------------------------------------------------------------------------
// Temporal convolution

namespace {

Eigen::Index windows_for(const std::vector<Eigen::Index>& lengths, Eigen::Index width, Eigen::Index rows) {
  Eigen::Index total_in = 0;
  Eigen::Index total_out = 0;
  for (auto len : lengths) {
    if (len < width)
      throw ShapeError("unfold: segment of length " + std::to_string(len) + " is shorter than window " +
                       std::to_string(width));
    total_in += len;
    total_out += len - width + 1;
  }
  if (total_in != rows)
    throw ShapeError("unfold: segment lengths sum to " + std::to_string(total_in) + " but input has " +
                     std::to_string(rows) + " rows");
  return total_out;
}

}  // namespace

template <typename T>
Var<T> unfold(const Var<T>& x, const std::vector<Eigen::Index>& lengths, Eigen::Index width) {
  if (width < 1) throw ParameterError("unfold: width must be >= 1");
  const auto out_rows = windows_for(lengths, width, x.rows());
  const auto c = x.cols();
  Matrix<T> out(out_rows, width * c);
  Eigen::Index in_off = 0;
  Eigen::Index out_off = 0;
  for (auto len : lengths) {
    for (Eigen::Index t = 0; t + width <= len; ++t, ++out_off)
      for (Eigen::Index k = 0; k < width; ++k) out.block(out_off, k * c, 1, c) = x.value().row(in_off + t + k);
    in_off += len;
  }
  return make<T>(
      std::move(out), {x},
      [lengths, width, c](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
        return {fold(g, lengths, width, c)};
      },
      "unfold");
}

template <typename T>
Var<T> fold(const Var<T>& windows, const std::vector<Eigen::Index>& lengths, Eigen::Index width,
            Eigen::Index channels) {
  Eigen::Index total_in = 0;
  for (auto len : lengths) total_in += len;
  const auto expected = windows_for(lengths, width, total_in);
  if (windows.rows() != expected || windows.cols() != width * channels)
    shape_fail("fold", windows.rows(), windows.cols(), expected, width * channels);
  Matrix<T> out = Matrix<T>::Zero(total_in, channels);
  Eigen::Index in_off = 0;
  Eigen::Index w_off = 0;
  for (auto len : lengths) {
    for (Eigen::Index t = 0; t + width <= len; ++t, ++w_off)
      for (Eigen::Index k = 0; k < width; ++k)
        out.row(in_off + t + k) += windows.value().block(w_off, k * channels, 1, channels);
    in_off += len;
  }
  return make<T>(
      std::move(out), {windows},
      [lengths, width](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> { return {unfold(g, lengths, width)}; },
      "fold");
}

template <typename T>
Var<T> conv1d_valid(const Var<T>& x, const Var<T>& kernel, Eigen::Index width) {
  if (kernel.rows() != width * x.cols()) shape_fail("conv1d_valid", x.rows(), x.cols(), kernel.rows(), kernel.cols());
  return matmul(unfold(x, {x.rows()}, width), kernel);
}

// ---------------------------------------------------------------------------
// Differentiation

template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs, bool create_graph) {
  if (output.size() != 1)
    throw ShapeError("grad: output must be a scalar, got " + shape_string(output.rows(), output.cols()));

  std::unordered_map<const Node<T>*, std::size_t> target_slot;
  for (std::size_t i = 0; i < inputs.size(); ++i) target_slot.emplace(inputs[i].node(), i);

  // Post-order DFS over nodes that require grad; `reaches` marks nodes with a
  // path to some requested input.
  std::vector<const Var<T>*> order;
  std::unordered_map<const Node<T>*, bool> reaches;
  if (output.requires_grad()) {
    struct Frame {
      const Var<T>* v;
      std::size_t next;
    };
    std::vector<Frame> stack{{&output, 0}};
    reaches.emplace(output.node(), false);
    while (!stack.empty()) {
      auto& top = stack.back();
      const auto& ins = top.v->node()->inputs;
      if (top.next < ins.size()) {
        const Var<T>& child = ins[top.next++];
        if (child.requires_grad() && !reaches.count(child.node())) {
          reaches.emplace(child.node(), false);
          stack.push_back({&child, 0});
        }
        continue;
      }
      bool r = target_slot.count(top.v->node()) > 0;
      for (const auto& in : ins)
        if (in.requires_grad() && reaches[in.node()]) r = true;
      reaches[top.v->node()] = r;
      order.push_back(top.v);
      stack.pop_back();
    }
  }

  std::vector<Var<T>> result(inputs.size());
  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace();

  std::unordered_map<const Node<T>*, Var<T>> grads;
  if (output.requires_grad() && reaches[output.node()]) grads[output.node()] = scalar<T>(T(1));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Var<T>& v = **it;
    auto found = grads.find(v.node());
    if (found == grads.end()) continue;
    Var<T> g = found->second;
    if (auto slot = target_slot.find(v.node()); slot != target_slot.end()) result[slot->second] = g;
    if (!v.node()->backward) {
      grads.erase(found);
      continue;
    }
    const auto in_grads = v.node()->backward(v, g);
    const auto& ins = v.node()->inputs;
    for (std::size_t i = 0; i < ins.size(); ++i) {
      if (!in_grads[i].defined() || !ins[i].requires_grad() || !reaches[ins[i].node()]) continue;
      auto [slot, inserted] = grads.try_emplace(ins[i].node(), in_grads[i]);
      if (!inserted) slot->second = add(slot->second, in_grads[i]);
    }
    // Targets keep their gradient until the end of the sweep.
    if (!target_slot.count(v.node())) grads.erase(v.node());
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (auto g = grads.find(inputs[i].node()); g != grads.end()) result[i] = g->second;
    if (!result[i].defined()) result[i] = zeros<T>(inputs[i].rows(), inputs[i].cols());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Parameter sets

template <typename T>
void ParamSet<T>::add(std::string name, Var<T> v) {
  if (contains(name)) throw ParameterError("ParamSet: duplicate name '" + name + "'");
  names_.push_back(std::move(name));
  vars_.push_back(std::move(v));
}

template <typename T>
bool ParamSet<T>::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

template <typename T>
const Var<T>& ParamSet<T>::get(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw std::out_of_range("ParamSet: no tensor named '" + name + "'");
  return vars_[static_cast<std::size_t>(it - names_.begin())];
}

template <typename T>
std::size_t ParamSet<T>::numel() const {
  std::size_t n = 0;
  for (const auto& v : vars_) n += static_cast<std::size_t>(v.size());
  return n;
}

template <typename T>
std::vector<T> ParamSet<T>::flatten() const {
  std::vector<T> out;
  out.reserve(numel());
  for (const auto& v : vars_) out.insert(out.end(), v.value().data(), v.value().data() + v.size());
  return out;
}

template <typename T>
ParamSet<T> ParamSet<T>::unflatten(const std::vector<T>& flat) const {
  if (flat.size() != numel())
    throw ParameterError("ParamSet::unflatten: expected " + std::to_string(numel()) + " values, got " +
                         std::to_string(flat.size()));
  ParamSet<T> out;
  std::size_t off = 0;
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    Matrix<T> m(vars_[i].rows(), vars_[i].cols());
    std::copy_n(flat.data() + off, m.size(), m.data());
    off += static_cast<std::size_t>(m.size());
    out.add(names_[i], parameter<T>(std::move(m)));
  }
  return out;
}

template <typename T>
ParamSet<T> ParamSet<T>::as_leaves() const {
  ParamSet<T> out;
  for (std::size_t i = 0; i < vars_.size(); ++i) out.add(names_[i], parameter<T>(vars_[i].value()));
  return out;
}

template <typename T>
ParamSet<T> ParamSet<T>::detached() const {
  ParamSet<T> out;
  for (std::size_t i = 0; i < vars_.size(); ++i) out.add(names_[i], constant<T>(vars_[i].value()));
  return out;
}

template <typename T>
ParamSet<T> backward(const Var<T>& loss, const ParamSet<T>& params, bool create_graph) {
  if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_string(loss.rows(), loss.cols()));
  auto g = grad(loss, params.vars(), create_graph);
  ParamSet<T> out;
  for (std::size_t i = 0; i < params.size(); ++i) out.add(params.name(i), std::move(g[i]));
  return out;
}

template <typename T>
ParamSet<T> grad_through_update(const ParamSet<T>& params, const ParamSet<T>& grads, T step, bool first_order) {
  if (step < T(0)) throw ParameterError("grad_through_update: step size must be non-negative");
  if (grads.size() != params.size()) throw ParameterError("grad_through_update: gradient set size mismatch");
  ParamSet<T> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Var<T> g = first_order ? detach(grads[i]) : grads[i];
    out.add(params.name(i), sub(params[i], affine(g, step)));
  }
  return out;
}

template <typename T>
FiniteDiffReport finite_diff_check(const std::function<Var<T>(const ParamSet<T>&)>& loss_fn,
                                   const ParamSet<T>& params, double eps, double floor) {
  if (!(eps > 0.0)) throw ParameterError("finite_diff_check: eps must be positive");
  if (!(floor > 0.0)) throw ParameterError("finite_diff_check: floor must be positive");
  const auto leaves = params.as_leaves();
  const auto analytic = backward(loss_fn(leaves), leaves);
  const auto base = leaves.flatten();

  // Recording stays on: loss_fn may differentiate internally.
  FiniteDiffReport report;
  auto perturbed = base;
  std::size_t flat = 0;
  for (std::size_t p = 0; p < leaves.size(); ++p) {
    const auto& g = analytic[p].value();
    for (Eigen::Index k = 0; k < g.size(); ++k, ++flat) {
      perturbed[flat] = base[flat] + static_cast<T>(eps);
      const double up = static_cast<double>(loss_fn(leaves.unflatten(perturbed)).item());
      perturbed[flat] = base[flat] - static_cast<T>(eps);
      const double down = static_cast<double>(loss_fn(leaves.unflatten(perturbed)).item());
      perturbed[flat] = base[flat];
      const double numeric = (up - down) / (2.0 * eps);
      const double ad = static_cast<double>(g.data()[k]);
      const double rel = std::abs(ad - numeric) / std::max(floor, std::abs(ad) + std::abs(numeric));
      ++report.coordinates;
      if (rel > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = rel;
        report.worst_param = leaves.name(p);
        report.worst_index = static_cast<std::size_t>(k);
        report.worst_analytic = ad;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

#define STF2M_INSTANTIATE_AD(T)                                                                               \
  template class Var<T>;                                                                                      \
  template class ParamSet<T>;                                                                                 \
  template Var<T> constant<T>(Matrix<T>);                                                                     \
  template Var<T> parameter<T>(Matrix<T>);                                                                    \
  template Var<T> zeros<T>(Eigen::Index, Eigen::Index);                                                       \
  template Var<T> scalar<T>(T);                                                                               \
  template Var<T> detach<T>(const Var<T>&);                                                                   \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&, bool, bool);                                        \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> affine<T>(const Var<T>&, T, T);                                                             \
  template Var<T> sigmoid<T>(const Var<T>&);                                                                  \
  template Var<T> tanh<T>(const Var<T>&);                                                                     \
  template Var<T> relu<T>(const Var<T>&);                                                                     \
  template Var<T> exp<T>(const Var<T>&);                                                                      \
  template Var<T> log<T>(const Var<T>&);                                                                      \
  template Var<T> reciprocal<T>(const Var<T>&);                                                               \
  template Var<T> add_row<T>(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> mul_col<T>(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> sum_rows<T>(const Var<T>&);                                                                 \
  template Var<T> sum_cols<T>(const Var<T>&);                                                                 \
  template Var<T> broadcast_rows<T>(const Var<T>&, Eigen::Index);                                             \
  template Var<T> broadcast_cols<T>(const Var<T>&, Eigen::Index);                                             \
  template Var<T> sum_all<T>(const Var<T>&);                                                                  \
  template Var<T> mean_all<T>(const Var<T>&);                                                                 \
  template Var<T> log_softmax<T>(const Var<T>&);                                                              \
  template Var<T> softmax<T>(const Var<T>&);                                                                  \
  template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                                                 \
  template Var<T> slice_cols<T>(const Var<T>&, Eigen::Index, Eigen::Index);                                   \
  template Var<T> pad_cols<T>(const Var<T>&, Eigen::Index, Eigen::Index);                                     \
  template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                                                 \
  template Var<T> slice_rows<T>(const Var<T>&, Eigen::Index, Eigen::Index);                                   \
  template Var<T> pad_rows<T>(const Var<T>&, Eigen::Index, Eigen::Index);                                     \
  template Var<T> gather_rows<T>(const Var<T>&, const std::vector<Eigen::Index>&);                            \
  template Var<T> scatter_add_rows<T>(const Var<T>&, const std::vector<Eigen::Index>&, Eigen::Index);         \
  template Var<T> unfold<T>(const Var<T>&, const std::vector<Eigen::Index>&, Eigen::Index);                   \
  template Var<T> fold<T>(const Var<T>&, const std::vector<Eigen::Index>&, Eigen::Index, Eigen::Index);       \
  template Var<T> conv1d_valid<T>(const Var<T>&, const Var<T>&, Eigen::Index);                                \
  template std::vector<Var<T>> grad<T>(const Var<T>&, const std::vector<Var<T>>&, bool);                      \
  template ParamSet<T> backward<T>(const Var<T>&, const ParamSet<T>&, bool);                                  \
  template ParamSet<T> grad_through_update<T>(const ParamSet<T>&, const ParamSet<T>&, T, bool);               \
  template FiniteDiffReport finite_diff_check<T>(const std::function<Var<T>(const ParamSet<T>&)>&,            \
                                                 const ParamSet<T>&, double, double);

STF2M_INSTANTIATE_AD(double)
STF2M_INSTANTIATE_AD(float)

#undef STF2M_INSTANTIATE_AD

}  // namespace stf2m::ad
