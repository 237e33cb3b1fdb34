#include "gessl/taskgen.hpp"

#include <algorithm>
#include <numeric>

namespace gessl {

void Dataset::validate() const {
  if (features.rank() != 2) throw ShapeError("dataset features must be rank 2");
  if (true_labels && true_labels->size() != features.rows()) {
    throw ShapeError("dataset has " + std::to_string(true_labels->size()) + " labels for " +
                     std::to_string(features.rows()) + " rows");
  }
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw std::invalid_argument("synthetic spec: classes must be >= 2");
  if (per_class < 2) throw std::invalid_argument("synthetic spec: per_class must be >= 2");
  if (dim < 2) throw std::invalid_argument("synthetic spec: dim must be >= 2");
  if (!(center_scale > 0.0)) throw std::invalid_argument("synthetic spec: center_scale must be > 0");
  if (within_sigma < 0.0) throw std::invalid_argument("synthetic spec: within_sigma must be >= 0");
}

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  RngStream centers_rng = RngStream::derive(seed, StreamPurpose::data, {0});
  std::vector<double> centers(spec.classes * spec.dim);
  for (double& c : centers) c = spec.center_scale * centers_rng.normal();

  RngStream sample_rng = RngStream::derive(seed, StreamPurpose::data, {1});
  const std::size_t n = spec.classes * spec.per_class;
  std::vector<double> features(n * spec.dim);
  std::vector<int> labels(n);
  for (std::size_t k = 0; k < spec.classes; ++k) {
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      const std::size_t row = k * spec.per_class + i;
      labels[row] = static_cast<int>(k);
      for (std::size_t j = 0; j < spec.dim; ++j) {
        features[row * spec.dim + j] = centers[k * spec.dim + j] + spec.within_sigma * sample_rng.normal();
      }
    }
  }
  Dataset out{Tensor({n, spec.dim}, std::move(features)), std::move(labels), "synthetic-blobs"};
  return out;
}

void AugmentationSpec::validate() const {
  if (noise_sigma < 0.0) throw std::invalid_argument("augmentation: noise_sigma must be >= 0");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw std::invalid_argument("augmentation: dropout_p must be in [0,1)");
  if (!(scale_lo > 0.0) || scale_hi < scale_lo) {
    throw std::invalid_argument("augmentation: scale range must satisfy 0 < lo <= hi");
  }
}

std::vector<double> augment(std::span<const double> row, const AugmentationSpec& spec, RngStream& rng) {
  const double factor = rng.uniform(spec.scale_lo, spec.scale_hi);
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) {
    const double keep = rng.uniform() >= spec.dropout_p ? 1.0 : 0.0;
    const double noise = rng.normal();
    out[j] = row[j] * keep * factor + spec.noise_sigma * noise;
  }
  return out;
}

TaskBatch make_task(const Dataset& dataset, std::size_t N, std::size_t A, const AugmentationSpec& aug,
                    RngStream& rng) {
  aug.validate();
  const std::size_t n = dataset.rows();
  const std::size_t d = dataset.dim();
  if (N == 0) throw std::invalid_argument("make_task: N must be >= 1");
  if (N > n) {
    throw std::invalid_argument("make_task: N=" + std::to_string(N) + " exceeds dataset rows " + std::to_string(n));
  }
  if (A < 2) throw std::invalid_argument("make_task: A must be >= 2");

  // Partial Fisher-Yates: the first N slots are a uniform sample without replacement.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(order[i], order[j]);
  }

  TaskBatch task;
  task.N = N;
  task.A = A;
  task.key = rng.key();
  task.source_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(N));
  std::vector<double> views;
  views.reserve(N * A * d);
  const auto features = dataset.features.values();
  for (std::size_t i = 0; i < N; ++i) {
    const auto row = features.subspan(task.source_indices[i] * d, d);
    for (std::size_t a = 0; a < A; ++a) {
      const auto view = augment(row, aug, rng);
      views.insert(views.end(), view.begin(), view.end());
      task.pseudo_labels.push_back(static_cast<int>(i));
    }
  }
  task.views = Tensor({N * A, d}, std::move(views));
  return task;
}

RngStream task_stream(std::uint64_t master_seed, std::uint64_t episode, std::uint64_t task) {
  return RngStream::derive(master_seed, StreamPurpose::task, {episode, task});
}

std::vector<TaskBatch> make_episode(const Dataset& dataset, std::size_t M, std::size_t N, std::size_t A,
                                    const AugmentationSpec& aug, std::uint64_t master_seed,
                                    std::uint64_t episode) {
  if (M == 0) throw std::invalid_argument("make_episode: M must be >= 1");
  std::vector<TaskBatch> tasks;
  tasks.reserve(M);
  for (std::size_t l = 0; l < M; ++l) {
    RngStream rng = task_stream(master_seed, episode, l);
    tasks.push_back(make_task(dataset, N, A, aug, rng));
  }
  return tasks;
}

void validate_task(const TaskBatch& task) {
  if (task.views.rank() != 2 || task.views.rows() != task.N * task.A) {
    throw std::logic_error("task: expected " + std::to_string(task.N * task.A) + " views");
  }
  if (task.pseudo_labels.size() != task.N * task.A) throw std::logic_error("task: label count mismatch");
  std::vector<std::size_t> counts(task.N, 0);
  for (std::size_t s = 0; s < task.pseudo_labels.size(); ++s) {
    const int label = task.pseudo_labels[s];
    if (label < 0 || static_cast<std::size_t>(label) >= task.N) throw std::logic_error("task: label out of range");
    if (static_cast<std::size_t>(label) != s / task.A) throw std::logic_error("task: view rows out of order");
    ++counts[static_cast<std::size_t>(label)];
  }
  for (std::size_t c : counts) {
    if (c != task.A) throw std::logic_error("task: label multiset violated");
  }
  std::vector<std::size_t> sources = task.source_indices;
  std::sort(sources.begin(), sources.end());
  if (sources.size() != task.N || std::adjacent_find(sources.begin(), sources.end()) != sources.end()) {
    throw std::logic_error("task: source rows are not distinct");
  }
}

}  // namespace gessl
