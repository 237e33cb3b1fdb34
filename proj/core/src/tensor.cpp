#include "gessl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace gessl {

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + shape_string(t.shape()));
  }
}

enum class Broadcast { none, row };

Broadcast binary_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (a.rank() == 2 && b.rank() == 2 && b.rows() == 1 && b.cols() == a.cols()) {
    return Broadcast::row;
  }
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                   shape_string(b.shape()));
}

template <typename F>
Tensor binary_forward(const char* op, const Tensor& a, const Tensor& b, F f) {
  const Broadcast mode = binary_broadcast(op, a, b);
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  if (mode == Broadcast::none) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  } else {
    const std::size_t cols = a.cols();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i % cols]);
  }
  return Tensor(a.shape(), std::move(out));
}

// Reduces a gradient of shape `full` to the shape of a broadcast operand.
std::vector<double> reduce_broadcast(const std::vector<double>& g, const Tensor& operand,
                                     std::size_t full_size) {
  if (operand.size() == full_size) return g;
  const std::size_t cols = operand.size();
  std::vector<double> out(cols, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) out[i % cols] += g[i];
  return out;
}

std::vector<double> matmul_raw(std::span<const double> a, std::span<const double> b, std::size_t m,
                               std::size_t k, std::size_t n) {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

std::vector<double> transpose_raw(std::span<const double> x, std::size_t r, std::size_t c) {
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return out;
}

Tensor forward(OpKind kind, std::span<const Tensor> in, const OpAttrs& attrs) {
  auto expect_arity = [&](std::size_t n) {
    if (in.size() != n) {
      throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                                  " inputs, got " + std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::leaf:
      throw std::invalid_argument("leaf is not an applicable op");
    case OpKind::add:
      expect_arity(2);
      return binary_forward("add", in[0], in[1], [](double x, double y) { return x + y; });
    case OpKind::sub:
      expect_arity(2);
      return binary_forward("sub", in[0], in[1], [](double x, double y) { return x - y; });
    case OpKind::mul:
      expect_arity(2);
      return binary_forward("mul", in[0], in[1], [](double x, double y) { return x * y; });
    case OpKind::scale: {
      expect_arity(1);
      std::vector<double> out(in[0].values().begin(), in[0].values().end());
      for (double& v : out) v = attrs.factor * v + attrs.shift;
      return Tensor(in[0].shape(), std::move(out));
    }
    case OpKind::matmul: {
      expect_arity(2);
      require_rank2("matmul", in[0]);
      require_rank2("matmul", in[1]);
      if (in[0].cols() != in[1].rows()) {
        throw ShapeError("matmul: shape mismatch " + shape_string(in[0].shape()) + " vs " +
                         shape_string(in[1].shape()));
      }
      const std::size_t m = in[0].rows(), k = in[0].cols(), n = in[1].cols();
      return Tensor({m, n}, matmul_raw(in[0].values(), in[1].values(), m, k, n));
    }
    case OpKind::transpose: {
      expect_arity(1);
      require_rank2("transpose", in[0]);
      const std::size_t r = in[0].rows(), c = in[0].cols();
      return Tensor({c, r}, transpose_raw(in[0].values(), r, c));
    }
    case OpKind::relu: {
      expect_arity(1);
      std::vector<double> out(in[0].values().begin(), in[0].values().end());
      for (double& v : out) v = v > 0.0 ? v : 0.0;
      return Tensor(in[0].shape(), std::move(out));
    }
    case OpKind::exp: {
      expect_arity(1);
      std::vector<double> out(in[0].values().begin(), in[0].values().end());
      for (double& v : out) v = std::exp(v);
      return Tensor(in[0].shape(), std::move(out));
    }
    case OpKind::log: {
      expect_arity(1);
      std::vector<double> out(in[0].values().begin(), in[0].values().end());
      for (double& v : out) {
        if (!(v > 0.0)) {
          throw DomainError("log: non-positive input " + std::to_string(v));
        }
        v = std::log(v);
      }
      return Tensor(in[0].shape(), std::move(out));
    }
    case OpKind::sum: {
      expect_arity(1);
      const auto v = in[0].values();
      return Tensor::scalar(std::accumulate(v.begin(), v.end(), 0.0));
    }
    case OpKind::mean: {
      expect_arity(1);
      const auto v = in[0].values();
      if (v.empty()) throw ShapeError("mean: empty tensor");
      return Tensor::scalar(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
    }
    case OpKind::concat_rows: {
      if (in.empty()) throw std::invalid_argument("concat_rows: no inputs");
      require_rank2("concat_rows", in[0]);
      const std::size_t cols = in[0].cols();
      std::size_t rows = 0;
      std::vector<double> out;
      for (const Tensor& t : in) {
        require_rank2("concat_rows", t);
        if (t.cols() != cols) {
          throw ShapeError("concat_rows: shape mismatch " + shape_string(in[0].shape()) + " vs " +
                           shape_string(t.shape()));
        }
        rows += t.rows();
        out.insert(out.end(), t.values().begin(), t.values().end());
      }
      return Tensor({rows, cols}, std::move(out));
    }
    case OpKind::l2_normalize_rows: {
      expect_arity(1);
      require_rank2("l2_normalize_rows", in[0]);
      const std::size_t r = in[0].rows(), c = in[0].cols();
      std::vector<double> out(in[0].values().begin(), in[0].values().end());
      for (std::size_t i = 0; i < r; ++i) {
        double* row = out.data() + i * c;
        double sq = 0.0;
        for (std::size_t j = 0; j < c; ++j) sq += row[j] * row[j];
        const double norm = std::sqrt(sq);
        if (norm < kNormalizeFloor) continue;
        for (std::size_t j = 0; j < c; ++j) row[j] /= norm;
      }
      return Tensor(in[0].shape(), std::move(out));
    }
    case OpKind::softmax_rows: {
      expect_arity(1);
      require_rank2("softmax_rows", in[0]);
      const std::size_t r = in[0].rows(), c = in[0].cols();
      std::vector<double> out(in[0].values().begin(), in[0].values().end());
      for (std::size_t i = 0; i < r; ++i) {
        double* row = out.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          row[j] = std::exp(row[j] - mx);
          total += row[j];
        }
        for (std::size_t j = 0; j < c; ++j) row[j] /= total;
      }
      return Tensor(in[0].shape(), std::move(out));
    }
    case OpKind::clamp_min: {
      expect_arity(1);
      std::vector<double> out(in[0].values().begin(), in[0].values().end());
      for (double& v : out) v = std::max(v, attrs.floor);
      return Tensor(in[0].shape(), std::move(out));
    }
  }
  throw std::invalid_argument("unknown op");
}

// Accumulates input gradients for one node given the gradient of its output.
void backward_node(const DiffRecord::Node& node, const std::vector<double>& g,
                   std::vector<std::vector<double>>& out) {
  const auto& in = node.inputs;
  out.assign(in.size(), {});
  switch (node.kind) {
    case OpKind::leaf:
      return;
    case OpKind::add:
      out[0] = g;
      out[1] = reduce_broadcast(g, in[1], g.size());
      return;
    case OpKind::sub: {
      out[0] = g;
      std::vector<double> neg(g);
      for (double& v : neg) v = -v;
      out[1] = reduce_broadcast(neg, in[1], g.size());
      return;
    }
    case OpKind::mul: {
      const auto a = in[0].values();
      const auto b = in[1].values();
      const bool row = in[1].size() != in[0].size();
      const std::size_t cols = row ? in[1].size() : 1;
      std::vector<double> ga(g.size()), gb(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double bi = row ? b[i % cols] : b[i];
        ga[i] = g[i] * bi;
        gb[i] = g[i] * a[i];
      }
      out[0] = std::move(ga);
      out[1] = reduce_broadcast(gb, in[1], g.size());
      return;
    }
    case OpKind::scale: {
      std::vector<double> gx(g);
      for (double& v : gx) v *= node.attrs.factor;
      out[0] = std::move(gx);
      return;
    }
    case OpKind::matmul: {
      const std::size_t m = in[0].rows(), k = in[0].cols(), n = in[1].cols();
      const auto bt = transpose_raw(in[1].values(), k, n);
      const auto at = transpose_raw(in[0].values(), m, k);
      out[0] = matmul_raw(g, bt, m, n, k);
      out[1] = matmul_raw(at, g, k, m, n);
      return;
    }
    case OpKind::transpose: {
      // output is [c x r]
      out[0] = transpose_raw(g, in[0].cols(), in[0].rows());
      return;
    }
    case OpKind::relu: {
      const auto x = in[0].values();
      std::vector<double> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = x[i] > 0.0 ? g[i] : 0.0;
      out[0] = std::move(gx);
      return;
    }
    case OpKind::exp: {
      const auto y = node.output.values();
      std::vector<double> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * y[i];
      out[0] = std::move(gx);
      return;
    }
    case OpKind::log: {
      const auto x = in[0].values();
      std::vector<double> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] / x[i];
      out[0] = std::move(gx);
      return;
    }
    case OpKind::sum:
      out[0].assign(in[0].size(), g[0]);
      return;
    case OpKind::mean:
      out[0].assign(in[0].size(), g[0] / static_cast<double>(in[0].size()));
      return;
    case OpKind::concat_rows: {
      std::size_t offset = 0;
      for (std::size_t p = 0; p < in.size(); ++p) {
        const auto first = g.begin() + static_cast<std::ptrdiff_t>(offset);
        out[p].assign(first, first + static_cast<std::ptrdiff_t>(in[p].size()));
        offset += in[p].size();
      }
      return;
    }
    case OpKind::l2_normalize_rows: {
      const std::size_t r = in[0].rows(), c = in[0].cols();
      const auto x = in[0].values();
      const auto y = node.output.values();
      std::vector<double> gx(g.size());
      for (std::size_t i = 0; i < r; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < c; ++j) sq += x[i * c + j] * x[i * c + j];
        const double norm = std::sqrt(sq);
        if (norm < kNormalizeFloor) {
          for (std::size_t j = 0; j < c; ++j) gx[i * c + j] = g[i * c + j];
          continue;
        }
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * g[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          gx[i * c + j] = (g[i * c + j] - y[i * c + j] * dot) / norm;
        }
      }
      out[0] = std::move(gx);
      return;
    }
    case OpKind::softmax_rows: {
      const std::size_t r = in[0].rows(), c = in[0].cols();
      const auto y = node.output.values();
      std::vector<double> gx(g.size());
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * g[i * c + j];
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] = y[i * c + j] * (g[i * c + j] - dot);
      }
      out[0] = std::move(gx);
      return;
    }
    case OpKind::clamp_min: {
      const auto x = in[0].values();
      std::vector<double> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = x[i] >= node.attrs.floor ? g[i] : 0.0;
      out[0] = std::move(gx);
      return;
    }
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::relu: return "relu";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::l2_normalize_rows: return "l2_normalize_rows";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::clamp_min: return "clamp_min";
  }
  return "unknown";
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.empty() || shape_.size() > 4) {
    throw ShapeError("tensor rank must be in 1..4, got " + std::to_string(shape_.size()));
  }
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_string(shape_));
  }
  if (product(shape_) != values_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                     std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw ShapeError("matrix: no rows");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> values;
  values.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("matrix: ragged rows");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(values));
}

Tensor Tensor::row_vector(std::span<const double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows(): tensor is not rank 2: " + shape_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols(): tensor is not rank 2: " + shape_string(shape_));
  return shape_[1];
}

std::span<double> Tensor::mutable_values() {
  if (tracked()) throw std::logic_error("cannot mutate a tracked tensor");
  return values_;
}

double Tensor::at(std::size_t r, std::size_t c) const { return values_.at(r * cols() + c); }

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item(): tensor is not scalar: " + shape_string(shape_));
  return values_[0];
}

NodeId Tensor::node() const {
  if (!tracked()) throw std::logic_error("tensor is not tracked");
  return node_;
}

Tensor Tensor::detach() const { return Tensor(shape_, values_); }

Tensor DiffRecord::track(Tensor value) {
  if (value.tracked()) throw std::logic_error("tensor is already tracked");
  Node node;
  node.kind = OpKind::leaf;
  node.output = value.detach();
  nodes_.push_back(std::move(node));
  value.record_ = this;
  value.node_ = nodes_.size() - 1;
  return value;
}

std::vector<NodeId> DiffRecord::leaves() const {
  std::vector<NodeId> out;
  for (NodeId i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].kind == OpKind::leaf) out.push_back(i);
  return out;
}

Tensor DiffRecord::append(OpKind kind, std::span<const Tensor> inputs, Tensor output, const OpAttrs& attrs) {
  Node node;
  node.kind = kind;
  node.attrs = attrs;
  node.parents.reserve(inputs.size());
  node.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    if (t.tracked()) {
      if (t.record() != this) throw std::logic_error("op mixes tensors from different records");
      node.parents.emplace_back(t.node());
    } else {
      node.parents.emplace_back(std::nullopt);
    }
    node.inputs.push_back(t.detach());
  }
  node.output = output.detach();
  nodes_.push_back(std::move(node));
  output.record_ = this;
  output.node_ = nodes_.size() - 1;
  return output;
}

GradientMap DiffRecord::backward(const Tensor& output) const {
  if (output.size() != 1) {
    throw ShapeError("backward: output must be scalar, got " + shape_string(output.shape()));
  }
  if (!output.tracked() || output.record() != this || output.node() >= nodes_.size()) {
    throw std::invalid_argument("backward: output does not belong to this record");
  }
  std::vector<std::vector<double>> grads(nodes_.size());
  grads[output.node()] = {1.0};
  std::vector<std::vector<double>> parent_grads;
  for (NodeId id = output.node() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (grads[id].empty() || node.kind == OpKind::leaf) continue;
    backward_node(node, grads[id], parent_grads);
    for (std::size_t p = 0; p < node.parents.size(); ++p) {
      if (!node.parents[p]) continue;
      auto& dst = grads[*node.parents[p]];
      if (dst.empty()) {
        dst = std::move(parent_grads[p]);
      } else {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += parent_grads[p][i];
      }
    }
  }
  GradientMap result;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].kind != OpKind::leaf) continue;
    const Shape& shape = nodes_[id].output.shape();
    if (grads[id].empty()) {
      result.emplace(id, Tensor::zeros(shape));
    } else {
      result.emplace(id, Tensor(shape, std::move(grads[id])));
    }
  }
  return result;
}

const Tensor& DiffRecord::gradient_of(const GradientMap& grads, const Tensor& leaf) {
  auto it = grads.find(leaf.node());
  if (it == grads.end()) throw std::invalid_argument("gradient_of: node is not a leaf of the record");
  return it->second;
}

Tensor apply(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs) {
  Tensor out = forward(kind, inputs, attrs);
  DiffRecord* record = nullptr;
  for (const Tensor& t : inputs) {
    if (!t.tracked()) continue;
    if (record && record != t.record()) throw std::logic_error("op mixes tensors from different records");
    record = t.record();
  }
  if (!record) return out;
  return record->append(kind, inputs, std::move(out), attrs);
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Tensor in[] = {a, b};
  return apply(OpKind::add, in);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  const Tensor in[] = {a, b};
  return apply(OpKind::sub, in);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  const Tensor in[] = {a, b};
  return apply(OpKind::mul, in);
}
Tensor scale(const Tensor& x, double factor, double shift) {
  OpAttrs attrs;
  attrs.factor = factor;
  attrs.shift = shift;
  return apply(OpKind::scale, std::span(&x, 1), attrs);
}
Tensor matmul(const Tensor& a, const Tensor& b) {
  const Tensor in[] = {a, b};
  return apply(OpKind::matmul, in);
}
Tensor transpose(const Tensor& x) { return apply(OpKind::transpose, std::span(&x, 1)); }
Tensor relu(const Tensor& x) { return apply(OpKind::relu, std::span(&x, 1)); }
Tensor exp(const Tensor& x) { return apply(OpKind::exp, std::span(&x, 1)); }
Tensor log(const Tensor& x) { return apply(OpKind::log, std::span(&x, 1)); }
Tensor sum(const Tensor& x) { return apply(OpKind::sum, std::span(&x, 1)); }
Tensor mean(const Tensor& x) { return apply(OpKind::mean, std::span(&x, 1)); }
Tensor concat_rows(std::span<const Tensor> parts) { return apply(OpKind::concat_rows, parts); }
Tensor l2_normalize_rows(const Tensor& x) { return apply(OpKind::l2_normalize_rows, std::span(&x, 1)); }
Tensor softmax_rows(const Tensor& x) { return apply(OpKind::softmax_rows, std::span(&x, 1)); }
Tensor clamp_min(const Tensor& x, double floor) {
  OpAttrs attrs;
  attrs.floor = floor;
  return apply(OpKind::clamp_min, std::span(&x, 1), attrs);
}

}  // namespace gessl
