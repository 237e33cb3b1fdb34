#pragma once

// The bi-level trainer: per-task inner adaptation, the self-motivated target
// built by continuing the inner descent, distillation toward that fixed
// target, and the outer update of the shared initialization.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "gessl/hypergrad.hpp"
#include "gessl/losses.hpp"
#include "gessl/metrics.hpp"
#include "gessl/models.hpp"
#include "gessl/taskgen.hpp"

namespace gessl {

enum class DistillKind { kl, mse, cross_entropy };

const char* distill_name(DistillKind kind);

struct GesslConfig {
  std::size_t K = 1;
  std::size_t lambda_extra = 10;
  std::size_t M = 8;
  double alpha = 1e-2;
  double beta = 1e-2;
  LossKind loss = ContrastiveNtXent{};
  ClassHead pi = PrototypeHead{};
  HypergradKind hypergrad = AidFd{};
  DistillKind distill = DistillKind::kl;
  double outer_momentum = 0.9;
  double outer_weight_decay = 1e-4;
  std::size_t N = 16;
  std::size_t A = 2;
  std::size_t episodes = 50;
  std::uint64_t master_seed = 0;
  EncoderConfig encoder;
  AugmentationSpec augmentation;
  /// Learning rate of the equal-budget conventional SSL baseline.
  double baseline_lr = 1e-2;

  void validate() const;
};

struct TaskAdaptResult {
  Snapshot snapshot_K;
  Snapshot snapshot_K_plus_lambda;
  Tensor target_distributions;  // detached, [(N*A) x N]
  std::vector<double> inner_loss_trace;
};

/// SSL loss value and its parameter gradients.
std::pair<double, ParameterSet> loss_and_gradient(const ParameterSet& params, const TaskBatch& task,
                                                  const LossKind& loss);

/// `steps` plain gradient steps f <- f - alpha grad l(f, task). Loss values
/// before each step are appended to `trace` when given.
ParameterSet inner_adapt(const ParameterSet& f_theta, const TaskBatch& task, std::size_t steps, double alpha,
                         const LossKind& loss, std::vector<double>* trace = nullptr);

/// Class distributions of `params` over the task's views.
Tensor task_distributions(const ParameterSet& params, const TaskBatch& task, const ClassHead& pi);

/// Continues the descent from f_K for `lambda_extra` steps and freezes the
/// class distributions of the result as the distillation target. The trace
/// holds the lambda-phase losses only.
TaskAdaptResult build_target(const ParameterSet& f_K, const TaskBatch& task, std::size_t lambda_extra, double alpha,
                             const LossKind& loss, const ClassHead& pi);

/// K-phase then lambda-phase; the trace is their concatenation.
TaskAdaptResult adapt_task(const ParameterSet& f_theta, const TaskBatch& task, const GesslConfig& config);

/// Differentiable distillation loss of the current model toward a fixed target.
Tensor distill_loss_tensor(const ParameterSet& f_current, const TaskBatch& task, const Tensor& target,
                           const ClassHead& pi, DistillKind kind);
double distill_loss(const ParameterSet& f_current, const TaskBatch& task, const Tensor& target, const ClassHead& pi,
                    DistillKind kind);
std::pair<double, ParameterSet> distill_gradient(const ParameterSet& f_current, const TaskBatch& task,
                                                 const Tensor& target, const ClassHead& pi, DistillKind kind);

/// Bilevel problem for one task over flattened parameters. The inner loss is
/// the SSL loss plus proximal_weight/2 |phi - theta|^2; the outer loss is the
/// distillation loss toward `target`.
BilevelProblem make_task_problem(const ParameterSet& layout, const TaskBatch& task, const Tensor& target,
                                 const GesslConfig& config, double proximal_weight);

/// Hypergradient of one task's distillation loss with respect to theta.
HypergradResult task_hypergradient(const ParameterSet& theta, const ParameterSet& f_K, const TaskBatch& task,
                                   const Tensor& target, const GesslConfig& config);

struct OuterState {
  OptimState optim;
  std::optional<ParameterSet> slow;  // lookahead slow weights
  std::size_t steps = 0;

  static OuterState from_config(const GesslConfig& config);
};

struct StepMetrics {
  double inner_loss_mean = 0.0;
  double distill_loss = 0.0;  // mean over tasks of the distillation loss at f_K
  double outer_grad_norm = 0.0;
  std::size_t inner_gradient_evaluations = 0;
};

struct OuterStepResult {
  ParameterSet params;
  StepMetrics metrics;
};

OuterStepResult outer_step(const ParameterSet& f_theta, std::span<const TaskBatch> tasks, const GesslConfig& config,
                           OuterState& state);

using StepObserver = std::function<void(MetricsRecord&, const ParameterSet&)>;

struct TrainResult {
  ParameterSet params;
  std::vector<MetricsRecord> metrics;
};

TrainResult train(const Dataset& dataset, const GesslConfig& config, const StepObserver& observer = {});

/// Conventional SSL on the same task streams with the same number of
/// inner-loss gradient evaluations per episode as the bi-level trainer.
TrainResult train_baseline(const Dataset& dataset, const GesslConfig& config, const StepObserver& observer = {});

/// Inner-loss gradient evaluations the bi-level trainer spends per episode.
std::size_t inner_budget_per_episode(const GesslConfig& config);

struct TheoremRow {
  double alpha = 0.0;
  double beta = 0.0;
  double fraction_non_increasing = 0.0;
  double mean_delta = 0.0;
};

/// Small-learning-rate monotonicity probe: for each (alpha, beta) runs `steps`
/// plain outer steps over `seeds` seeds and reports how often the summed
/// distillation objective, re-evaluated on the same tasks and targets after
/// the step, did not increase.
std::vector<TheoremRow> theorem_check(const Dataset& dataset, const GesslConfig& base,
                                      std::span<const std::pair<double, double>> lr_grid, std::size_t seeds = 5,
                                      std::size_t steps = 50);

}  // namespace gessl
