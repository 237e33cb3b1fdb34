#pragma once

// Encoder, projection head and class-probability heads, plus the parameter
// containers and the SGD step shared by both optimization levels.

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "gessl/tensor.hpp"

namespace gessl {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Ordered, uniquely named model parameters. Copies are deep.
class ParameterSet {
 public:
  ParameterSet() = default;

  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  void set(std::string_view name, Tensor value);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::span<const NamedTensor> entries() const noexcept { return entries_; }
  const NamedTensor& operator[](std::size_t i) const { return entries_[i]; }

  /// Total number of scalar parameters.
  std::size_t scalar_count() const noexcept;
  /// True when names, order and shapes agree.
  bool same_layout(const ParameterSet& other) const noexcept;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  std::vector<NamedTensor> entries_;
};

/// Registers every parameter as a leaf of `record`.
ParameterSet track(DiffRecord& record, const ParameterSet& params);
/// Collects gradients for the tracked leaves of `tracked` under the same names.
ParameterSet collect_gradients(const GradientMap& grads, const ParameterSet& tracked);

Eigen::VectorXd flatten(const ParameterSet& params);
ParameterSet unflatten(const ParameterSet& layout, const Eigen::VectorXd& flat);

struct EncoderConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden_dims = {64, 64};
  std::size_t embed_dim = 32;
  std::size_t proj_dim = 16;

  void validate() const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases. Layers
/// are named "encoder.<i>.weight|bias" and "projector.weight|bias"; weights
/// are stored [fan_in x fan_out].
ParameterSet init_encoder(const EncoderConfig& config, std::uint64_t seed);

/// MLP forward: affine/relu pairs, final affine to the embedding width.
Tensor encode(const ParameterSet& params, const Tensor& batch);
/// Affine projection of embeddings followed by row l2-normalization.
Tensor project(const ParameterSet& params, const Tensor& embeddings);

/// Prototype-softmax class head: cosine similarity to leave-one-out class
/// prototypes under temperature `tau`.
Tensor pi_prototype(const Tensor& embeddings, std::span<const int> labels, std::size_t num_classes,
                    double tau);

struct LinearHeadParams {
  Tensor weight;  // [embed_dim x classes]
  Tensor bias;    // [1 x classes]
};

LinearHeadParams make_linear_head(std::size_t embed_dim, std::size_t classes, std::uint64_t seed);
Tensor pi_linear(const LinearHeadParams& head, const Tensor& embeddings);

struct PrototypeHead {
  double tau = 0.1;
};

/// Frozen random affine head; the per-task head is seeded from `seed` and the
/// task key.
struct LinearHead {
  std::uint64_t seed = 0;
};

using ClassHead = std::variant<PrototypeHead, LinearHead>;

/// Evaluates the configured class head on a task's embeddings.
Tensor class_distributions(const ClassHead& head, const Tensor& embeddings, std::span<const int> labels,
                           std::size_t num_classes, std::uint64_t task_key);

struct OptimState {
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::vector<Tensor> velocity;  // empty until the first step

  static OptimState plain() { return {}; }
};

/// v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v.
ParameterSet sgd_step(const ParameterSet& params, const ParameterSet& grads, double lr, OptimState& state);

enum class SnapshotTag { current, inner_K, inner_K_plus_lambda };

const char* snapshot_tag_name(SnapshotTag tag);

struct Snapshot {
  ParameterSet params;
  SnapshotTag tag = SnapshotTag::current;
};

Snapshot clone_snapshot(const ParameterSet& params, SnapshotTag tag);

}  // namespace gessl
