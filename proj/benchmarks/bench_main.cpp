#include <benchmark/benchmark.h>

#include "gessl/hypergrad.hpp"
#include "gessl/trainer.hpp"

using namespace gessl;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  RngStream rng = RngStream::derive(seed, StreamPurpose::bench, {r, c});
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor({r, c}, std::move(v));
}

const Dataset& blobs() {
  static const Dataset d = generate_synthetic({}, 0);
  return d;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1);
  const Tensor b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 128);

static void BM_SoftmaxRows(benchmark::State& state) {
  const Tensor x = random_matrix(32, static_cast<std::size_t>(state.range(0)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(softmax_rows(x));
}
BENCHMARK(BM_SoftmaxRows)->Arg(16)->Arg(64)->Arg(256);

static void BM_EncoderBackward(benchmark::State& state) {
  const ParameterSet params = init_encoder({16, {64, 64}, 32, 16}, 0);
  const Tensor batch = random_matrix(32, 16, 4);
  for (auto _ : state) {
    DiffRecord record;
    const ParameterSet tracked = track(record, params);
    const Tensor loss = sum(project(tracked, encode(tracked, batch)));
    benchmark::DoNotOptimize(record.backward(loss));
  }
}
BENCHMARK(BM_EncoderBackward);

static void BM_SslLossAndGradient(benchmark::State& state) {
  const GesslConfig config;
  const ParameterSet params = init_encoder(config.encoder, 0);
  const TaskBatch task = make_episode(blobs(), 1, config.N, config.A, config.augmentation, 0, 0)[0];
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradient(params, task, config.loss));
}
BENCHMARK(BM_SslLossAndGradient);

template <typename Run>
static void quadratic_bench(benchmark::State& state, Run run) {
  const QuadraticInstance q = quadratic_family(1, 16, 7, 1.0, 2.0)[0];
  const BilevelProblem problem = make_quadratic_problem(q, kMaxUnrolledSteps, 2.0 / (q.eig_min + q.eig_max));
  const Vector phi_star = q.theta - q.A.ldlt().solve(q.b);
  for (auto _ : state) benchmark::DoNotOptimize(run(problem, q, phi_star));
}

static void BM_HypergradItd(benchmark::State& state) {
  quadratic_bench(state, [](const BilevelProblem& p, const QuadraticInstance& q, const Vector&) {
    return hypergrad_itd(p, q.theta);
  });
}
static void BM_HypergradNeumann(benchmark::State& state) {
  quadratic_bench(state, [](const BilevelProblem& p, const QuadraticInstance& q, const Vector& phi) {
    return hypergrad_aid_neumann(p, q.theta, phi, 200, 1.0 / q.eig_max);
  });
}
static void BM_HypergradCg(benchmark::State& state) {
  quadratic_bench(state, [](const BilevelProblem& p, const QuadraticInstance& q, const Vector& phi) {
    return hypergrad_aid_cg(p, q.theta, phi, static_cast<int>(q.b.size()), 1e-13);
  });
}
static void BM_HypergradFd(benchmark::State& state) {
  quadratic_bench(state, [](const BilevelProblem& p, const QuadraticInstance& q, const Vector& phi) {
    return hypergrad_aid_fd(p, q.theta, phi, 1e-3);
  });
}
BENCHMARK(BM_HypergradItd);
BENCHMARK(BM_HypergradNeumann);
BENCHMARK(BM_HypergradCg);
BENCHMARK(BM_HypergradFd);

static void BM_OuterStep(benchmark::State& state) {
  GesslConfig config;
  const ParameterSet theta = init_encoder(config.encoder, 0);
  const auto tasks = make_episode(blobs(), config.M, config.N, config.A, config.augmentation, 0, 0);
  for (auto _ : state) {
    OuterState outer = OuterState::from_config(config);
    benchmark::DoNotOptimize(outer_step(theta, tasks, config, outer));
  }
  state.SetLabel(hypergrad_name(config.hypergrad));
}
BENCHMARK(BM_OuterStep)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
