#include "gessl/sigma_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "gessl/metrics.hpp"
#include "gessl/rng.hpp"

namespace gessl {

namespace {

constexpr double kClampFloor = 1e-12;
constexpr double kSumTolerance = 1e-9;

void check_distribution(std::span<const double> p, const char* which) {
  double total = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument(fmt::format("kl_divergence: {} has an invalid entry", which));
    total += v;
  }
  if (std::abs(total - 1.0) > kSumTolerance) {
    throw std::invalid_argument(fmt::format("kl_divergence: {} sums to {}", which, format_double(total)));
  }
}

void check_labels(const Eigen::MatrixXd& features, std::span<const int> labels) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw std::invalid_argument("probe: feature rows and labels differ in count");
  }
  for (int l : labels)
    if (l < 0) throw std::invalid_argument("probe: labels must be non-negative");
}

// Sample order that depends only on the (label, feature) content, so the
// probes do not depend on how the rows were listed.
std::vector<std::size_t> canonical_order(const Eigen::MatrixXd& features, std::span<const int> labels) {
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (labels[a] != labels[b]) return labels[a] < labels[b];
    for (Eigen::Index c = 0; c < features.cols(); ++c) {
      const double x = features(static_cast<Eigen::Index>(a), c);
      const double y = features(static_cast<Eigen::Index>(b), c);
      if (x != y) return x < y;
    }
    return false;
  });
  return order;
}

std::size_t argmax_row(const Eigen::MatrixXd& m, Eigen::Index r) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c)
    if (m(r, c) > m(r, best)) best = c;
  return static_cast<std::size_t>(best);
}

}  // namespace

OracleLabeler::OracleLabeler(std::vector<std::vector<int>> labels, std::vector<std::size_t> classes)
    : labels_(std::move(labels)), classes_(std::move(classes)) {
  if (labels_.size() != classes_.size()) throw std::invalid_argument("OracleLabeler: one class count per task");
  for (std::size_t t = 0; t < labels_.size(); ++t) {
    for (int l : labels_[t]) {
      if (l < 0 || static_cast<std::size_t>(l) >= classes_[t]) {
        throw std::invalid_argument(fmt::format("OracleLabeler: label {} out of range in task {}", l, t));
      }
    }
  }
}

OracleLabeler OracleLabeler::from_tasks(std::span<const TaskBatch> tasks) {
  std::vector<std::vector<int>> labels;
  std::vector<std::size_t> classes;
  for (const TaskBatch& task : tasks) {
    labels.push_back(task.pseudo_labels);
    classes.push_back(task.N);
  }
  return OracleLabeler(std::move(labels), std::move(classes));
}

std::vector<double> OracleLabeler::one_hot(std::size_t task, std::size_t sample) const {
  std::vector<double> row(classes(task), 0.0);
  row[static_cast<std::size_t>(label(task, sample))] = 1.0;
  return row;
}

void ProbeConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("probe: epochs must be >= 1");
  if (k < 1) throw std::invalid_argument("probe: k must be >= 1");
  if (!(lr > 0.0) || l2 < 0.0) throw std::invalid_argument("probe: need lr > 0 and l2 >= 0");
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw std::invalid_argument("kl_divergence: length mismatch");
  check_distribution(p, "p");
  check_distribution(q, "q");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) total += p[i] * std::log(p[i] / std::max(q[i], kClampFloor));
  }
  return total;
}

SigmaReport sigma_measure(const DistributionProvider& model, std::span<const TaskBatch> suite,
                          const OracleLabeler& oracle) {
  if (oracle.tasks() < suite.size()) {
    throw std::invalid_argument(fmt::format("sigma_measure: oracle covers {} of {} tasks", oracle.tasks(), suite.size()));
  }
  SigmaReport report;
  for (std::size_t t = 0; t < suite.size(); ++t) {
    const TaskBatch& task = suite[t];
    if (oracle.samples(t) < task.samples()) {
      throw std::invalid_argument(fmt::format("sigma_measure: oracle covers {} of {} samples in task {}",
                                              oracle.samples(t), task.samples(), t));
    }
    const Tensor dist = model(task);
    if (dist.rank() != 2 || dist.rows() != task.samples() || dist.cols() != oracle.classes(t)) {
      throw ShapeError("sigma_measure: model output " + shape_string(dist.shape()) + " does not match task " +
                       std::to_string(t));
    }
    double sigma = 0.0;
    for (std::size_t i = 0; i < task.samples(); ++i) {
      const std::vector<double> truth = oracle.one_hot(t, i);
      sigma += kl_divergence(truth, dist.values().subspan(i * dist.cols(), dist.cols()));
    }
    report.per_task_sigma.push_back(sigma);
    report.total += sigma;
    report.samples += task.samples();
  }
  report.tasks = suite.size();
  report.per_sample_mean = report.samples ? report.total / static_cast<double>(report.samples) : 0.0;
  return report;
}

SigmaReport sigma_measure(const ParameterSet& params, const ClassHead& pi, std::span<const TaskBatch> suite,
                          const OracleLabeler& oracle) {
  return sigma_measure([&](const TaskBatch& task) { return task_distributions(params, task, pi); }, suite, oracle);
}

double performance_ratio(double accuracy_a, double accuracy_b) {
  if (accuracy_b == 0.0) throw std::invalid_argument("performance_ratio: reference accuracy is zero");
  return accuracy_a / accuracy_b;
}

double one_step_accuracy(const ParameterSet& params, std::span<const TaskBatch> suite, const GesslConfig& config) {
  if (suite.empty()) throw std::invalid_argument("one_step_accuracy: empty task suite");
  double total = 0.0;
  for (const TaskBatch& task : suite) {
    const ParameterSet adapted = inner_adapt(params, task, 1, config.alpha, config.loss);
    const Tensor dist = task_distributions(adapted, task, config.pi);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < task.samples(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < dist.cols(); ++c)
        if (dist.at(i, c) > dist.at(i, best)) best = c;
      if (static_cast<int>(best) == task.pseudo_labels[i]) ++correct;
    }
    total += static_cast<double>(correct) / static_cast<double>(task.samples());
  }
  return total / static_cast<double>(suite.size());
}

double universality_ratio(const ParameterSet& model_a, const ParameterSet& model_b, std::span<const TaskBatch> suite,
                          const GesslConfig& config) {
  return performance_ratio(one_step_accuracy(model_a, suite, config), one_step_accuracy(model_b, suite, config));
}

Eigen::MatrixXd embed_dataset(const ParameterSet& params, const Dataset& dataset) {
  const Tensor emb = encode(params, dataset.features);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(emb.rows()), static_cast<Eigen::Index>(emb.cols()));
  for (std::size_t r = 0; r < emb.rows(); ++r)
    for (std::size_t c = 0; c < emb.cols(); ++c) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = emb.at(r, c);
  return out;
}

double linear_probe(const Eigen::MatrixXd& features, std::span<const int> labels, const ProbeConfig& probe) {
  probe.validate();
  check_labels(features, labels);
  const std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) throw std::invalid_argument("linear_probe: need at least two classes");
  const auto n = labels.size();

  std::vector<std::size_t> order = canonical_order(features, labels);
  RngStream rng = RngStream::derive(probe.seed, StreamPurpose::probe, {n});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const std::size_t n_test = std::max<std::size_t>(1, n / 5);
  const std::size_t n_train = n - n_test;
  if (n_train == 0) throw std::invalid_argument("linear_probe: too few samples for a split");

  const Eigen::Index e = features.cols();
  const auto classes = static_cast<Eigen::Index>(*distinct.rbegin() + 1);
  Eigen::MatrixXd train(static_cast<Eigen::Index>(n_train), e);
  Eigen::MatrixXd test(static_cast<Eigen::Index>(n_test), e);
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_train), classes);
  for (std::size_t i = 0; i < n_test; ++i) test.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(order[i]));
  for (std::size_t i = 0; i < n_train; ++i) {
    const std::size_t src = order[n_test + i];
    train.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(src));
    onehot(static_cast<Eigen::Index>(i), labels[src]) = 1.0;
  }

  const Eigen::RowVectorXd mu = train.colwise().mean();
  Eigen::RowVectorXd sd = ((train.rowwise() - mu).array().square().colwise().mean()).sqrt().matrix();
  for (Eigen::Index c = 0; c < e; ++c)
    if (!(sd[c] > 1e-12)) sd[c] = 1.0;
  train = ((train.rowwise() - mu).array().rowwise() / sd.array()).matrix();
  test = ((test.rowwise() - mu).array().rowwise() / sd.array()).matrix();

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(e, classes);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(classes);
  const double inv_n = 1.0 / static_cast<double>(n_train);
  for (std::size_t epoch = 0; epoch < probe.epochs; ++epoch) {
    Eigen::MatrixXd logits = (train * w).rowwise() + b;
    const Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
    logits = (logits.colwise() - row_max).array().exp().matrix();
    const Eigen::VectorXd row_sum = logits.rowwise().sum();
    const Eigen::MatrixXd residual = (logits.array().colwise() / row_sum.array()).matrix() - onehot;
    w -= probe.lr * (inv_n * (train.transpose() * residual) + probe.l2 * w);
    b -= probe.lr * inv_n * residual.colwise().sum();
  }

  const Eigen::MatrixXd scores = (test * w).rowwise() + b;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n_test; ++i) {
    if (static_cast<int>(argmax_row(scores, static_cast<Eigen::Index>(i))) == labels[order[i]]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n_test);
}

double knn_eval(const Eigen::MatrixXd& features, std::span<const int> labels, std::size_t k) {
  check_labels(features, labels);
  if (k < 1) throw std::invalid_argument("knn_eval: k must be >= 1");
  const std::size_t n = labels.size();
  if (n <= k) throw std::invalid_argument(fmt::format("knn_eval: need more than k={} samples, got {}", k, n));

  const std::vector<std::size_t> order = canonical_order(features, labels);
  Eigen::MatrixXd unit(static_cast<Eigen::Index>(n), features.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::RowVectorXd row = features.row(static_cast<Eigen::Index>(order[i]));
    const double norm = row.norm();
    unit.row(static_cast<Eigen::Index>(i)) = norm > 0.0 ? Eigen::RowVectorXd(row / norm) : row;
  }
  const Eigen::MatrixXd sim = unit * unit.transpose();
  const int classes = *std::max_element(labels.begin(), labels.end()) + 1;

  std::size_t correct = 0;
  std::vector<std::size_t> others(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t w = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) others[w++] = j;
    const auto row = static_cast<Eigen::Index>(i);
    std::partial_sort(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(k), others.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double sa = sim(row, static_cast<Eigen::Index>(a));
                        const double sb = sim(row, static_cast<Eigen::Index>(b));
                        return sa != sb ? sa > sb : a < b;
                      });
    std::vector<std::size_t> votes(static_cast<std::size_t>(classes), 0);
    for (std::size_t m = 0; m < k; ++m) ++votes[static_cast<std::size_t>(labels[order[others[m]]])];
    const auto predicted = std::distance(votes.begin(), std::max_element(votes.begin(), votes.end()));
    if (predicted == labels[order[i]]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

void write_radar_csv(const std::filesystem::path& path, std::span<const RadarEntry> entries) {
  std::map<std::string, std::pair<double, double>> range;
  for (const RadarEntry& e : entries) {
    auto [it, fresh] = range.try_emplace(e.suite, e.report.total, e.report.total);
    if (!fresh) {
      it->second.first = std::min(it->second.first, e.report.total);
      it->second.second = std::max(it->second.second, e.report.total);
    }
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "model,task_suite,sigma_total,sigma_mean,normalized\n";
  for (const RadarEntry& e : entries) {
    const auto [lo, hi] = range.at(e.suite);
    const double normalized = hi > lo ? (e.report.total - lo) / (hi - lo) : 0.0;
    out << e.model << ',' << e.suite << ',' << format_double(e.report.total) << ','
        << format_double(e.report.per_sample_mean) << ',' << format_double(normalized) << '\n';
  }
}

}  // namespace gessl
