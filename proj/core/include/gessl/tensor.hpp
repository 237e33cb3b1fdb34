#pragma once

// Dense float64 tensors with a tape-based reverse-mode differentiation record.
//
// A Tensor is a plain value until it is registered with a DiffRecord via
// DiffRecord::track(). Any op that consumes a tracked tensor appends a node to
// that tensor's record, and DiffRecord::backward() replays the record once in
// reverse append order.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gessl {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

class DiffRecord;

std::string shape_string(const Shape& shape);

/// Raised when operand shapes are incompatible for an op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an op is evaluated outside its mathematical domain (log of a
/// non-positive value, for instance).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor row_vector(std::span<const double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  /// Row count of a rank-2 tensor.
  std::size_t rows() const;
  /// Column count of a rank-2 tensor.
  std::size_t cols() const;

  std::span<const double> values() const noexcept { return values_; }
  /// Mutable access is only permitted on untracked tensors.
  std::span<double> mutable_values();

  double at(std::size_t r, std::size_t c) const;
  double operator[](std::size_t i) const { return values_[i]; }
  double item() const;

  bool tracked() const noexcept { return record_ != nullptr; }
  DiffRecord* record() const noexcept { return record_; }
  NodeId node() const;

  /// Untracked copy of the values.
  Tensor detach() const;

 private:
  friend class DiffRecord;
  Shape shape_;
  std::vector<double> values_;
  DiffRecord* record_ = nullptr;
  NodeId node_ = 0;
};

enum class OpKind {
  leaf,
  add,
  sub,
  mul,
  scale,
  matmul,
  transpose,
  relu,
  exp,
  log,
  sum,
  mean,
  concat_rows,
  l2_normalize_rows,
  softmax_rows,
  clamp_min,
};

const char* op_name(OpKind kind);

/// Scalar attributes consumed by `scale` (y = factor * x + shift) and
/// `clamp_min` (y = max(x, floor)).
struct OpAttrs {
  double factor = 1.0;
  double shift = 0.0;
  double floor = 0.0;
};

/// Generic op entry point. Binary elementwise ops accept either equal shapes or
/// a right-hand operand of shape [1 x c] broadcast across the rows of an
/// [r x c] left operand.
Tensor apply(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor, double shift = 0.0);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor l2_normalize_rows(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor clamp_min(const Tensor& x, double floor);

/// Rows with Euclidean norm below this are left unchanged by l2_normalize_rows.
inline constexpr double kNormalizeFloor = 1e-12;

using GradientMap = std::map<NodeId, Tensor>;

class DiffRecord {
 public:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<std::optional<NodeId>> parents;  // nullopt for constants
    std::vector<Tensor> inputs;                  // detached forward inputs
    Tensor output;                               // detached forward output
    OpAttrs attrs;
  };

  DiffRecord() = default;
  DiffRecord(const DiffRecord&) = delete;
  DiffRecord& operator=(const DiffRecord&) = delete;

  /// Registers `value` as a differentiable leaf and returns the tracked handle.
  Tensor track(Tensor value);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::vector<NodeId> leaves() const;

  /// Gradients of a scalar `output` with respect to every leaf of this record.
  /// Leaves the output does not depend on receive zero tensors.
  GradientMap backward(const Tensor& output) const;

  /// Gradient for one leaf out of a GradientMap.
  static const Tensor& gradient_of(const GradientMap& grads, const Tensor& leaf);

  Tensor append(OpKind kind, std::span<const Tensor> inputs, Tensor output, const OpAttrs& attrs);

 private:
  std::vector<Node> nodes_;
};

using ScalarFunction = std::function<Tensor(const Tensor&)>;

/// Max over coordinates of |analytic - central difference| / max(1e-8, |central
/// difference|) for a scalar-valued `fn` at `point`.
double grad_check(const ScalarFunction& fn, const Tensor& point, double h = 1e-5);

}  // namespace gessl
