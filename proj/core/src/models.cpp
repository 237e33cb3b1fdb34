#include "gessl/models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gessl/rng.hpp"

namespace gessl {

namespace {

std::string layer_name(std::size_t layer, const char* suffix) {
  return "encoder." + std::to_string(layer) + "." + suffix;
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add(matmul(x, weight), bias);
}

Tensor uniform_weight(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> values(fan_in * fan_out);
  for (double& v : values) v = rng.uniform(-bound, bound);
  return Tensor({fan_in, fan_out}, std::move(values));
}

}  // namespace

void ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  entries_.push_back({std::move(name), std::move(value)});
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const NamedTensor& e) { return e.name == name; });
}

const Tensor& ParameterSet::get(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.value;
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

void ParameterSet::set(std::string_view name, Tensor value) {
  for (auto& e : entries_) {
    if (e.name != name) continue;
    if (e.value.shape() != value.shape()) {
      throw ShapeError("parameter " + e.name + ": shape " + shape_string(value.shape()) + " does not match " +
                       shape_string(e.value.shape()));
    }
    e.value = std::move(value);
    return;
  }
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

std::size_t ParameterSet::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

bool ParameterSet::same_layout(const ParameterSet& other) const noexcept {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (entries_[i].value.shape() != other.entries_[i].value.shape()) return false;
  }
  return true;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto x = a.entries_[i].value.values();
    const auto y = b.entries_[i].value.values();
    if (!std::equal(x.begin(), x.end(), y.begin())) return false;
  }
  return true;
}

ParameterSet track(DiffRecord& record, const ParameterSet& params) {
  ParameterSet out;
  for (const auto& e : params.entries()) out.add(e.name, record.track(e.value.detach()));
  return out;
}

ParameterSet collect_gradients(const GradientMap& grads, const ParameterSet& tracked) {
  ParameterSet out;
  for (const auto& e : tracked.entries()) out.add(e.name, DiffRecord::gradient_of(grads, e.value));
  return out;
}

Eigen::VectorXd flatten(const ParameterSet& params) {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(params.scalar_count()));
  Eigen::Index offset = 0;
  for (const auto& e : params.entries()) {
    for (double v : e.value.values()) flat[offset++] = v;
  }
  return flat;
}

ParameterSet unflatten(const ParameterSet& layout, const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != layout.scalar_count()) {
    throw ShapeError("unflatten: vector of length " + std::to_string(flat.size()) + " does not match " +
                     std::to_string(layout.scalar_count()) + " parameters");
  }
  ParameterSet out;
  Eigen::Index offset = 0;
  for (const auto& e : layout.entries()) {
    std::vector<double> values(e.value.size());
    for (double& v : values) v = flat[offset++];
    out.add(e.name, Tensor(e.value.shape(), std::move(values)));
  }
  return out;
}

void EncoderConfig::validate() const {
  if (input_dim == 0 || embed_dim == 0 || proj_dim == 0) {
    throw std::invalid_argument("encoder dimensions must be >= 1");
  }
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw std::invalid_argument("encoder hidden dimensions must be >= 1");
  }
}

ParameterSet init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  ParameterSet params;
  std::vector<std::size_t> widths{config.input_dim};
  widths.insert(widths.end(), config.hidden_dims.begin(), config.hidden_dims.end());
  widths.push_back(config.embed_dim);
  for (std::size_t layer = 0; layer + 1 < widths.size(); ++layer) {
    RngStream rng = RngStream::derive(seed, StreamPurpose::init, {layer});
    params.add(layer_name(layer, "weight"), uniform_weight(widths[layer], widths[layer + 1], rng));
    params.add(layer_name(layer, "bias"), Tensor::zeros({1, widths[layer + 1]}));
  }
  RngStream rng = RngStream::derive(seed, StreamPurpose::init, {widths.size()});
  params.add("projector.weight", uniform_weight(config.embed_dim, config.proj_dim, rng));
  params.add("projector.bias", Tensor::zeros({1, config.proj_dim}));
  return params;
}

Tensor encode(const ParameterSet& params, const Tensor& batch) {
  std::size_t layers = 0;
  while (params.contains(layer_name(layers, "weight"))) ++layers;
  if (layers == 0) throw std::invalid_argument("encode: parameter set has no encoder layers");
  const Tensor& first = params.get(layer_name(0, "weight"));
  if (batch.rank() != 2 || batch.cols() != first.rows()) {
    throw ShapeError("encode: batch " + shape_string(batch.shape()) + " does not match input width " +
                     std::to_string(first.rows()));
  }
  Tensor h = batch;
  for (std::size_t layer = 0; layer < layers; ++layer) {
    h = affine(h, params.get(layer_name(layer, "weight")), params.get(layer_name(layer, "bias")));
    if (layer + 1 < layers) h = relu(h);
  }
  return h;
}

Tensor project(const ParameterSet& params, const Tensor& embeddings) {
  const Tensor& weight = params.get("projector.weight");
  if (embeddings.rank() != 2 || embeddings.cols() != weight.rows()) {
    throw ShapeError("project: embeddings " + shape_string(embeddings.shape()) + " do not match width " +
                     std::to_string(weight.rows()));
  }
  return l2_normalize_rows(affine(embeddings, weight, params.get("projector.bias")));
}

Tensor pi_prototype(const Tensor& embeddings, std::span<const int> labels, std::size_t num_classes, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("pi_prototype: tau must be positive");
  if (embeddings.rank() != 2 || embeddings.rows() != labels.size()) {
    throw ShapeError("pi_prototype: embeddings " + shape_string(embeddings.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t samples = labels.size();
  const std::size_t width = embeddings.cols();
  std::vector<std::size_t> counts(num_classes, 0);
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw std::invalid_argument("pi_prototype: label " + std::to_string(label) + " outside 0.." +
                                  std::to_string(num_classes - 1));
    }
    ++counts[static_cast<std::size_t>(label)];
  }
  for (std::size_t j = 0; j < num_classes; ++j) {
    if (counts[j] == 0) throw std::invalid_argument("pi_prototype: class " + std::to_string(j) + " is empty");
  }

  Tensor averaging = Tensor::zeros({num_classes, samples});
  Tensor leave_one_out = Tensor::zeros({samples, samples});
  Tensor own_mask = Tensor::zeros({samples, num_classes});
  Tensor other_mask = Tensor::full({samples, num_classes}, 1.0);
  {
    auto avg = averaging.mutable_values();
    auto loo = leave_one_out.mutable_values();
    auto own = own_mask.mutable_values();
    auto other = other_mask.mutable_values();
    for (std::size_t s = 0; s < samples; ++s) {
      const auto j = static_cast<std::size_t>(labels[s]);
      avg[j * samples + s] = 1.0 / static_cast<double>(counts[j]);
      own[s * num_classes + j] = 1.0;
      other[s * num_classes + j] = 0.0;
      if (counts[j] == 1) {
        loo[s * samples + s] = 1.0;
        continue;
      }
      for (std::size_t t = 0; t < samples; ++t) {
        if (t != s && labels[t] == labels[s]) loo[s * samples + t] = 1.0 / static_cast<double>(counts[j] - 1);
      }
    }
  }

  const Tensor unit = l2_normalize_rows(embeddings);
  const Tensor prototypes = l2_normalize_rows(matmul(averaging, unit));
  const Tensor cosines = matmul(unit, transpose(prototypes));
  const Tensor own_prototypes = l2_normalize_rows(matmul(leave_one_out, unit));
  const Tensor own_cos = matmul(mul(unit, own_prototypes), Tensor::full({width, 1}, 1.0));
  const Tensor own_spread = matmul(own_cos, Tensor::full({1, num_classes}, 1.0));
  const Tensor logits = add(mul(cosines, other_mask), mul(own_spread, own_mask));
  return softmax_rows(scale(logits, 1.0 / tau));
}

LinearHeadParams make_linear_head(std::size_t embed_dim, std::size_t classes, std::uint64_t seed) {
  RngStream rng = RngStream::derive(seed, StreamPurpose::head);
  return {uniform_weight(embed_dim, classes, rng), Tensor::zeros({1, classes})};
}

Tensor pi_linear(const LinearHeadParams& head, const Tensor& embeddings) {
  if (embeddings.rank() != 2 || embeddings.cols() != head.weight.rows()) {
    throw ShapeError("pi_linear: embeddings " + shape_string(embeddings.shape()) + " vs head " +
                     shape_string(head.weight.shape()));
  }
  return softmax_rows(affine(embeddings, head.weight, head.bias));
}

Tensor class_distributions(const ClassHead& head, const Tensor& embeddings, std::span<const int> labels,
                           std::size_t num_classes, std::uint64_t task_key) {
  if (const auto* proto = std::get_if<PrototypeHead>(&head)) {
    return pi_prototype(embeddings, labels, num_classes, proto->tau);
  }
  const auto& linear = std::get<LinearHead>(head);
  const LinearHeadParams params = make_linear_head(embeddings.cols(), num_classes, mix64(linear.seed ^ task_key));
  return pi_linear(params, embeddings);
}

ParameterSet sgd_step(const ParameterSet& params, const ParameterSet& grads, double lr, OptimState& state) {
  if (lr < 0.0) throw std::invalid_argument("sgd_step: learning rate must be >= 0");
  if (state.velocity.empty()) {
    for (const auto& e : params.entries()) state.velocity.push_back(Tensor::zeros(e.value.shape()));
  }
  if (state.velocity.size() != params.size()) throw std::invalid_argument("sgd_step: optimizer state does not match");
  ParameterSet out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, value] = params[i];
    if (!grads.contains(name)) throw std::invalid_argument("sgd_step: missing gradient for " + name);
    const Tensor& grad = grads.get(name);
    if (grad.shape() != value.shape()) {
      throw ShapeError("sgd_step: gradient for " + name + " has shape " + shape_string(grad.shape()));
    }
    Tensor& velocity = state.velocity[i];
    auto v = velocity.mutable_values();
    const auto g = grad.values();
    const auto p = value.values();
    std::vector<double> next(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = state.momentum * v[k] + (g[k] + state.weight_decay * p[k]);
      next[k] = p[k] - lr * v[k];
    }
    out.add(name, Tensor(value.shape(), std::move(next)));
  }
  return out;
}

const char* snapshot_tag_name(SnapshotTag tag) {
  switch (tag) {
    case SnapshotTag::current: return "current";
    case SnapshotTag::inner_K: return "inner_K";
    case SnapshotTag::inner_K_plus_lambda: return "inner_K_plus_lambda";
  }
  return "unknown";
}

Snapshot clone_snapshot(const ParameterSet& params, SnapshotTag tag) {
  ParameterSet copy;
  for (const auto& e : params.entries()) copy.add(e.name, e.value.detach());
  return {std::move(copy), tag};
}

}  // namespace gessl
