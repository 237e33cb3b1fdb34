#pragma once

// Universality measurement against one-hot task oracles, the one-step
// performance ratio, and frozen-feature probes.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gessl/models.hpp"
#include "gessl/taskgen.hpp"
#include "gessl/trainer.hpp"

namespace gessl {

/// Ground-truth class of every sample of every task in a suite.
class OracleLabeler {
 public:
  OracleLabeler() = default;
  OracleLabeler(std::vector<std::vector<int>> labels, std::vector<std::size_t> classes);

  /// The pseudo-classes the tasks were built with.
  static OracleLabeler from_tasks(std::span<const TaskBatch> tasks);

  std::size_t tasks() const noexcept { return labels_.size(); }
  std::size_t samples(std::size_t task) const { return labels_.at(task).size(); }
  std::size_t classes(std::size_t task) const { return classes_.at(task); }
  int label(std::size_t task, std::size_t sample) const { return labels_.at(task).at(sample); }
  std::vector<double> one_hot(std::size_t task, std::size_t sample) const;

 private:
  std::vector<std::vector<int>> labels_;
  std::vector<std::size_t> classes_;
};

struct SigmaReport {
  std::vector<double> per_task_sigma;
  double total = 0.0;
  double per_sample_mean = 0.0;
  std::size_t tasks = 0;
  std::size_t samples = 0;
};

struct ProbeConfig {
  std::size_t epochs = 300;
  double lr = 0.5;
  double l2 = 1e-4;
  std::size_t k = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// KL(p || q) = sum p ln(p / max(q, 1e-12)), natural log, 0 ln 0 = 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Class distributions [(samples) x classes] a model assigns to one task.
using DistributionProvider = std::function<Tensor(const TaskBatch&)>;

SigmaReport sigma_measure(const DistributionProvider& model, std::span<const TaskBatch> suite,
                          const OracleLabeler& oracle);
SigmaReport sigma_measure(const ParameterSet& params, const ClassHead& pi, std::span<const TaskBatch> suite,
                          const OracleLabeler& oracle);

/// accuracy_a / accuracy_b; throws when accuracy_b is zero.
double performance_ratio(double accuracy_a, double accuracy_b);

/// Mean over the suite of the class-head accuracy against the pseudo-labels
/// after a single inner step on each task.
double one_step_accuracy(const ParameterSet& params, std::span<const TaskBatch> suite, const GesslConfig& config);

double universality_ratio(const ParameterSet& model_a, const ParameterSet& model_b, std::span<const TaskBatch> suite,
                          const GesslConfig& config);

/// Encoder embeddings of every dataset row.
Eigen::MatrixXd embed_dataset(const ParameterSet& params, const Dataset& dataset);

/// Softmax regression by full-batch gradient descent on standardized
/// features; accuracy on a seeded 80/20 split.
double linear_probe(const Eigen::MatrixXd& features, std::span<const int> labels, const ProbeConfig& probe);

/// Leave-one-out cosine k-NN with majority vote, ties to the smallest class.
double knn_eval(const Eigen::MatrixXd& features, std::span<const int> labels, std::size_t k = 5);

struct RadarEntry {
  std::string model;
  std::string suite;
  SigmaReport report;
};

/// Writes model,task_suite,sigma_total,sigma_mean,normalized with sigma_total
/// min-max normalized across the models sharing a suite.
void write_radar_csv(const std::filesystem::path& path, std::span<const RadarEntry> entries);

}  // namespace gessl
