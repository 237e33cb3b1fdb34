#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "gessl/trainer.hpp"

namespace gessl {

namespace {

constexpr double kDistributionFloor = 1e-12;

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

void validate_target(const Tensor& target, std::size_t rows, std::size_t cols) {
  if (target.rank() != 2 || target.rows() != rows || target.cols() != cols) {
    throw ShapeError("distill: target " + shape_string(target.shape()) + " does not match task [" +
                     std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = target.at(r, c);
      if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("distill: target row " + std::to_string(r) + " is not a distribution");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw std::invalid_argument("distill: target row " + std::to_string(r) + " sums to " + std::to_string(total));
    }
  }
}

// Per-task inputs for one outer step.
struct PreparedTask {
  TaskAdaptResult adapt;
  double distill = 0.0;
};

PreparedTask prepare_task(const ParameterSet& theta, const TaskBatch& task, const GesslConfig& config) {
  PreparedTask out;
  out.adapt = adapt_task(theta, task, config);
  out.distill = distill_loss(out.adapt.snapshot_K.params, task, out.adapt.target_distributions, config.pi,
                             config.distill);
  return out;
}

}  // namespace

const char* distill_name(DistillKind kind) {
  switch (kind) {
    case DistillKind::kl: return "kl";
    case DistillKind::mse: return "mse";
    case DistillKind::cross_entropy: return "cross_entropy";
  }
  return "unknown";
}

void GesslConfig::validate() const {
  if (lambda_extra < 1) throw std::invalid_argument("config: lambda must be >= 1");
  if (M < 1) throw std::invalid_argument("config: M must be >= 1");
  if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("config: learning rates must be >= 0");
  if (N < 1) throw std::invalid_argument("config: N must be >= 1");
  if (A < 2) throw std::invalid_argument("config: A must be >= 2");
  if (outer_momentum < 0.0 || outer_momentum >= 1.0) throw std::invalid_argument("config: outer_momentum must be in [0,1)");
  if (outer_weight_decay < 0.0) throw std::invalid_argument("config: outer_weight_decay must be >= 0");
  if (const auto* proto = std::get_if<PrototypeHead>(&pi); proto && !(proto->tau > 0.0)) {
    throw std::invalid_argument("config: pi tau must be positive");
  }
  validate_loss(loss);
  validate_hypergrad(hypergrad);
  encoder.validate();
  augmentation.validate();
}

std::pair<double, ParameterSet> loss_and_gradient(const ParameterSet& params, const TaskBatch& task,
                                                  const LossKind& loss) {
  DiffRecord record;
  const ParameterSet tracked = track(record, params);
  const Tensor value = ssl_loss(tracked, task, loss);
  return {value.item(), collect_gradients(record.backward(value), tracked)};
}

ParameterSet inner_adapt(const ParameterSet& f_theta, const TaskBatch& task, std::size_t steps, double alpha,
                         const LossKind& loss, std::vector<double>* trace) {
  ParameterSet current = clone_snapshot(f_theta, SnapshotTag::current).params;
  OptimState plain = OptimState::plain();
  for (std::size_t k = 0; k < steps; ++k) {
    auto [value, grads] = loss_and_gradient(current, task, loss);
    if (trace) trace->push_back(value);
    current = sgd_step(current, grads, alpha, plain);
  }
  return current;
}

Tensor task_distributions(const ParameterSet& params, const TaskBatch& task, const ClassHead& pi) {
  return class_distributions(pi, encode(params, task.views), task.pseudo_labels, task.N, task.key);
}

TaskAdaptResult build_target(const ParameterSet& f_K, const TaskBatch& task, std::size_t lambda_extra, double alpha,
                             const LossKind& loss, const ClassHead& pi) {
  if (lambda_extra < 1) throw std::invalid_argument("build_target: lambda must be >= 1");
  TaskAdaptResult out;
  out.snapshot_K = clone_snapshot(f_K, SnapshotTag::inner_K);
  ParameterSet extended = inner_adapt(f_K, task, lambda_extra, alpha, loss, &out.inner_loss_trace);
  out.target_distributions = task_distributions(extended, task, pi).detach();
  out.snapshot_K_plus_lambda = clone_snapshot(extended, SnapshotTag::inner_K_plus_lambda);
  return out;
}

TaskAdaptResult adapt_task(const ParameterSet& f_theta, const TaskBatch& task, const GesslConfig& config) {
  std::vector<double> trace;
  const ParameterSet f_K = inner_adapt(f_theta, task, config.K, config.alpha, config.loss, &trace);
  TaskAdaptResult out = build_target(f_K, task, config.lambda_extra, config.alpha, config.loss, config.pi);
  trace.insert(trace.end(), out.inner_loss_trace.begin(), out.inner_loss_trace.end());
  out.inner_loss_trace = std::move(trace);
  return out;
}

Tensor distill_loss_tensor(const ParameterSet& f_current, const TaskBatch& task, const Tensor& target,
                           const ClassHead& pi, DistillKind kind) {
  validate_target(target, task.samples(), task.N);
  const Tensor constant_target = target.detach();
  const Tensor current = task_distributions(f_current, task, pi);
  switch (kind) {
    case DistillKind::kl: {
      // sum_x sum_j t (log t - log q), with 0 log 0 = 0. Identical t and q give
      // exactly zero.
      std::vector<double> log_target(constant_target.size());
      for (std::size_t i = 0; i < log_target.size(); ++i) {
        const double t = constant_target[i];
        log_target[i] = t > 0.0 ? std::log(std::max(t, kDistributionFloor)) : 0.0;
      }
      const Tensor log_t(constant_target.shape(), std::move(log_target));
      const Tensor log_q = log(clamp_min(current, kDistributionFloor));
      return sum(mul(constant_target, sub(log_t, log_q)));
    }
    case DistillKind::cross_entropy:
      return scale(sum(mul(constant_target, log(clamp_min(current, kDistributionFloor)))), -1.0);
    case DistillKind::mse: {
      const Tensor diff = sub(current, constant_target);
      return mean(mul(diff, diff));
    }
  }
  throw std::invalid_argument("unknown distillation kind");
}

double distill_loss(const ParameterSet& f_current, const TaskBatch& task, const Tensor& target, const ClassHead& pi,
                    DistillKind kind) {
  return distill_loss_tensor(f_current, task, target, pi, kind).item();
}

std::pair<double, ParameterSet> distill_gradient(const ParameterSet& f_current, const TaskBatch& task,
                                                 const Tensor& target, const ClassHead& pi, DistillKind kind) {
  DiffRecord record;
  const ParameterSet tracked = track(record, f_current);
  const Tensor value = distill_loss_tensor(tracked, task, target, pi, kind);
  return {value.item(), collect_gradients(record.backward(value), tracked)};
}

BilevelProblem make_task_problem(const ParameterSet& layout, const TaskBatch& task, const Tensor& target,
                                 const GesslConfig& config, double proximal_weight) {
  Objective inner = [layout, &task, loss = config.loss, proximal_weight](const Vector& phi, const Vector& theta) {
    auto [value, grads] = loss_and_gradient(unflatten(layout, phi), task, loss);
    ObjectiveValue out;
    const Vector offset = phi - theta;
    out.value = value + 0.5 * proximal_weight * offset.squaredNorm();
    out.grad_phi = flatten(grads) + proximal_weight * offset;
    out.grad_theta = -proximal_weight * offset;
    return out;
  };
  Objective outer = [layout, &task, target = target.detach(), pi = config.pi, kind = config.distill](
                        const Vector& phi, const Vector& theta) {
    auto [value, grads] = distill_gradient(unflatten(layout, phi), task, target, pi, kind);
    return ObjectiveValue{value, flatten(grads), Vector::Zero(theta.size())};
  };
  BilevelProblem problem(std::move(inner), std::move(outer));
  problem.init_from_theta = true;
  problem.inner_steps = static_cast<int>(config.K);
  problem.inner_lr = config.alpha;
  return problem;
}

HypergradResult task_hypergradient(const ParameterSet& theta, const ParameterSet& f_K, const TaskBatch& task,
                                   const Tensor& target, const GesslConfig& config) {
  const Vector theta_flat = flatten(theta);
  const Vector phi_flat = flatten(f_K);
  if (config.K == 0 || config.alpha == 0.0) {
    // phi = theta: the response Jacobian is the identity for every strategy.
    BilevelProblem problem = make_task_problem(theta, task, target, config, 0.0);
    return hypergrad_first_order(problem, theta_flat, phi_flat);
  }
  if (std::holds_alternative<ItdUnrolled>(config.hypergrad)) {
    BilevelProblem problem = make_task_problem(theta, task, target, config, 0.0);
    return hypergrad_itd(problem, theta_flat);
  }
  // Proximal inner problem whose stationary response matches K steps of size
  // alpha to first order.
  const double proximal = 1.0 / (config.alpha * static_cast<double>(config.K));
  BilevelProblem problem = make_task_problem(theta, task, target, config, proximal);
  return std::visit(
      [&](const auto& kind) -> HypergradResult {
        using K = std::decay_t<decltype(kind)>;
        if constexpr (std::is_same_v<K, AidNeumann>) {
          return hypergrad_aid_neumann(problem, theta_flat, phi_flat, kind.terms, kind.eta / proximal);
        } else if constexpr (std::is_same_v<K, AidCg>) {
          return hypergrad_aid_cg(problem, theta_flat, phi_flat, kind.iters, kind.tol);
        } else if constexpr (std::is_same_v<K, AidFd>) {
          return hypergrad_aid_fd(problem, theta_flat, phi_flat, kind.epsilon_rel, 1.0 / proximal);
        } else {
          return hypergrad_first_order(problem, theta_flat, phi_flat);
        }
      },
      config.hypergrad);
}

OuterState OuterState::from_config(const GesslConfig& config) {
  OuterState state;
  state.optim.momentum = config.outer_momentum;
  state.optim.weight_decay = config.outer_weight_decay;
  return state;
}

OuterStepResult outer_step(const ParameterSet& f_theta, std::span<const TaskBatch> tasks, const GesslConfig& config,
                           OuterState& state) {
  if (tasks.empty()) throw std::invalid_argument("outer_step: need at least one task");
  Vector total = Vector::Zero(static_cast<Eigen::Index>(f_theta.scalar_count()));
  StepMetrics metrics;
  double trace_sum = 0.0;
  std::size_t trace_count = 0;
  for (const TaskBatch& task : tasks) {
    const PreparedTask prepared = prepare_task(f_theta, task, config);
    const HypergradResult hg = task_hypergradient(f_theta, prepared.adapt.snapshot_K.params, task,
                                                  prepared.adapt.target_distributions, config);
    total += hg.gradient;
    metrics.distill_loss += prepared.distill;
    metrics.inner_gradient_evaluations += prepared.adapt.inner_loss_trace.size() + hg.inner_evaluations;
    trace_sum += std::accumulate(prepared.adapt.inner_loss_trace.begin(), prepared.adapt.inner_loss_trace.end(), 0.0);
    trace_count += prepared.adapt.inner_loss_trace.size();
  }
  metrics.distill_loss /= static_cast<double>(tasks.size());
  metrics.inner_loss_mean = trace_count ? trace_sum / static_cast<double>(trace_count) : 0.0;
  metrics.outer_grad_norm = total.norm();

  const ParameterSet grads = unflatten(f_theta, total);
  ParameterSet next = sgd_step(f_theta, grads, config.beta, state.optim);
  ++state.steps;
  if (const auto* la = std::get_if<Lookahead>(&config.hypergrad)) {
    if (!state.slow) state.slow = clone_snapshot(f_theta, SnapshotTag::current).params;
    if (state.steps % static_cast<std::size_t>(la->sync_period) == 0) {
      state.slow = lookahead_update(*state.slow, next, la->alpha_la);
      next = *state.slow;
    }
  }
  return {std::move(next), metrics};
}

TrainResult train(const Dataset& dataset, const GesslConfig& config, const StepObserver& observer) {
  config.validate();
  EncoderConfig encoder = config.encoder;
  encoder.input_dim = dataset.dim();
  TrainResult result;
  result.params = init_encoder(encoder, config.master_seed);
  OuterState state = OuterState::from_config(config);
  for (std::size_t episode = 0; episode < config.episodes; ++episode) {
    const auto start = std::chrono::steady_clock::now();
    const auto tasks = make_episode(dataset, config.M, config.N, config.A, config.augmentation, config.master_seed,
                                    episode);
    OuterStepResult step = outer_step(result.params, tasks, config, state);
    result.params = std::move(step.params);
    MetricsRecord record;
    record.step = episode + 1;
    record.episode = episode;
    record.seed = config.master_seed;
    record.mode = "gessl";
    record.inner_loss_mean = step.metrics.inner_loss_mean;
    record.distill_loss = step.metrics.distill_loss;
    record.outer_grad_norm = step.metrics.outer_grad_norm;
    if (observer) observer(record, result.params);
    record.wall_ms = elapsed_ms(start);
    result.metrics.push_back(record);
  }
  return result;
}

std::size_t inner_budget_per_episode(const GesslConfig& config) {
  return config.M * (config.K + config.lambda_extra);
}

TrainResult train_baseline(const Dataset& dataset, const GesslConfig& config, const StepObserver& observer) {
  config.validate();
  EncoderConfig encoder = config.encoder;
  encoder.input_dim = dataset.dim();
  TrainResult result;
  result.params = init_encoder(encoder, config.master_seed);
  OptimState optim;
  optim.momentum = config.outer_momentum;
  optim.weight_decay = config.outer_weight_decay;
  const std::size_t steps_per_task = config.K + config.lambda_extra;
  for (std::size_t episode = 0; episode < config.episodes; ++episode) {
    const auto start = std::chrono::steady_clock::now();
    const auto tasks = make_episode(dataset, config.M, config.N, config.A, config.augmentation, config.master_seed,
                                    episode);
    double loss_sum = 0.0;
    Vector last_grad;
    for (const TaskBatch& task : tasks) {
      for (std::size_t s = 0; s < steps_per_task; ++s) {
        auto [value, grads] = loss_and_gradient(result.params, task, config.loss);
        loss_sum += value;
        last_grad = flatten(grads);
        result.params = sgd_step(result.params, grads, config.baseline_lr, optim);
      }
    }
    MetricsRecord record;
    record.step = episode + 1;
    record.episode = episode;
    record.seed = config.master_seed;
    record.mode = "baseline_ssl";
    record.inner_loss_mean = loss_sum / static_cast<double>(tasks.size() * steps_per_task);
    record.outer_grad_norm = last_grad.size() ? last_grad.norm() : 0.0;
    if (observer) observer(record, result.params);
    record.wall_ms = elapsed_ms(start);
    result.metrics.push_back(record);
  }
  return result;
}

std::vector<TheoremRow> theorem_check(const Dataset& dataset, const GesslConfig& base,
                                      std::span<const std::pair<double, double>> lr_grid, std::size_t seeds,
                                      std::size_t steps) {
  std::vector<TheoremRow> rows;
  for (const auto& [alpha, beta] : lr_grid) {
    GesslConfig config = base;
    config.alpha = alpha;
    config.beta = beta;
    EncoderConfig encoder = config.encoder;
    encoder.input_dim = dataset.dim();
    std::size_t non_increasing = 0;
    std::size_t total = 0;
    double delta_sum = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
      const std::uint64_t seed = base.master_seed + s;
      ParameterSet theta = init_encoder(encoder, seed);
      for (std::size_t t = 0; t < steps; ++t) {
        const auto tasks = make_episode(dataset, config.M, config.N, config.A, config.augmentation, seed, t);
        std::vector<TaskAdaptResult> adapted;
        Vector gradient = Vector::Zero(static_cast<Eigen::Index>(theta.scalar_count()));
        double before = 0.0;
        for (const TaskBatch& task : tasks) {
          adapted.push_back(adapt_task(theta, task, config));
          const TaskAdaptResult& a = adapted.back();
          before += distill_loss(a.snapshot_K.params, task, a.target_distributions, config.pi, config.distill);
          gradient += task_hypergradient(theta, a.snapshot_K.params, task, a.target_distributions, config).gradient;
        }
        OptimState plain = OptimState::plain();
        const ParameterSet next = sgd_step(theta, unflatten(theta, gradient), beta, plain);
        double after = 0.0;
        for (std::size_t l = 0; l < tasks.size(); ++l) {
          const ParameterSet f_K = inner_adapt(next, tasks[l], config.K, alpha, config.loss);
          after += distill_loss(f_K, tasks[l], adapted[l].target_distributions, config.pi, config.distill);
        }
        if (after <= before) ++non_increasing;
        delta_sum += after - before;
        ++total;
        theta = next;
      }
    }
    rows.push_back({alpha, beta, total ? static_cast<double>(non_increasing) / static_cast<double>(total) : 1.0,
                    total ? delta_sum / static_cast<double>(total) : 0.0});
  }
  return rows;
}

}  // namespace gessl
