#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gessl/checkpoint.hpp"
#include "gessl/experiment.hpp"
#include "gessl/gradcheck_suite.hpp"
#include "gessl/metrics.hpp"

using namespace gessl;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

const Dataset& blobs() {
  static const Dataset d = generate_synthetic({}, 0);
  return d;
}

std::filesystem::path scratch_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() / fmt::format("gessl-acceptance-{}", tag);
  std::filesystem::remove_all(dir);
  return dir;
}

std::vector<char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict gradient_correctness() {
  double worst = 0.0;
  std::string worst_op;
  std::size_t min_points = SIZE_MAX;
  for (const OpCheckResult& r : run_gradcheck_suite(100, 0, 1e-5)) {
    min_points = std::min(min_points, r.points);
    if (r.max_error >= worst) {
      worst = r.max_error;
      worst_op = r.name;
    }
  }
  return {worst <= 1e-6 && min_points >= 100,
          fmt::format("every op, {} points each, max rel err {:.2e} ({})", min_points, worst, worst_op)};
}

Verdict hypergradient_oracles() {
  const std::vector<BenchRow> rows = hypergrad_bench({});
  const std::map<std::string, double> limits{
      {"aid_cg", 1e-8}, {"aid_neumann", 1e-3}, {"aid_fd", 5e-2}, {"itd", 1e-6}};
  std::map<std::string, double> worst;
  std::map<std::string, double> mean;
  std::map<std::string, std::size_t> cost;
  bool counts = true;
  bool cg_within_dim = true;
  std::set<std::size_t> problems;
  for (const BenchRow& r : rows) {
    problems.insert(r.problem);
    worst[r.method] = std::max(worst[r.method], r.relative_error);
    mean[r.method] += r.relative_error;
    cost[r.method] += r.inner_evaluations + r.outer_evaluations;
    counts = counts && r.inner_evaluations + r.outer_evaluations > 0;
    if (r.method == "aid_cg" && r.iterations > static_cast<int>(r.dim)) cg_within_dim = false;
  }
  bool pass = problems.size() == 50 && counts && cg_within_dim;
  std::string detail = fmt::format("{} problems;", problems.size());
  for (const auto& [method, limit] : limits) {
    const bool ok = worst.count(method) && worst[method] <= limit;
    pass = pass && ok;
    detail += fmt::format(" {} max {:.2e} (mean {:.2e}, limit {:.0e}, evals {}) {};", method, worst[method],
                          mean[method] / static_cast<double>(problems.size()), limit, cost[method],
                          ok ? "ok" : "over");
  }
  detail += counts ? " evaluation counts reported" : " missing evaluation counts";
  if (!cg_within_dim) detail += "; cg exceeded d iterations";
  return {pass, detail};
}

Verdict theorem_monotonicity() {
  GesslConfig config;
  const std::vector<std::pair<double, double>> grid{{1e-3, 1e-3}, {0.0, 0.0}};
  const auto rows = theorem_check(blobs(), config, grid, 5, 50);
  const bool small_ok = rows[0].fraction_non_increasing >= 0.90;
  const bool zero_ok = rows[1].fraction_non_increasing == 1.0 && rows[1].mean_delta == 0.0;
  return {small_ok && zero_ok,
          fmt::format("alpha=beta=1e-3: non-increasing on {:.1f}% of steps (need 90%), mean delta {:+.4g}; "
                      "alpha=beta=0: {:.1f}%, mean delta {:g}",
                      100 * rows[0].fraction_non_increasing, rows[0].mean_delta,
                      100 * rows[1].fraction_non_increasing, rows[1].mean_delta)};
}

Verdict directional_improvement() {
  ExperimentConfig config;
  config.seeds = {0, 1, 2, 3, 4};
  const Dataset dataset = load_dataset(config);
  double probe[2] = {0, 0};
  double knn[2] = {0, 0};
  for (std::uint64_t seed : config.seeds) {
    for (int m = 0; m < 2; ++m) {
      const RunOutcome run = run_single(config, dataset, m == 0 ? RunMode::gessl : RunMode::baseline_ssl, seed);
      probe[m] += *run.linear_probe_acc / 5.0;
      knn[m] += *run.knn_acc / 5.0;
    }
  }
  const double dp = probe[0] - probe[1];
  const double dk = knn[0] - knn[1];
  return {dp >= 0.0 && dk >= 0.0,
          fmt::format("5 seeds, linear probe gessl {:.4f} vs baseline {:.4f} (diff {:+.4f}); "
                      "5-nn gessl {:.4f} vs baseline {:.4f} (diff {:+.4f})",
                      probe[0], probe[1], dp, knn[0], knn[1], dk)};
}

Verdict sigma_soundness() {
  GesslConfig g;
  const std::vector<TaskBatch> suite = eval_suite(blobs(), g, 0, 8);
  const OracleLabeler oracle = OracleLabeler::from_tasks(suite);
  std::size_t samples = 0;
  for (const TaskBatch& t : suite) samples += t.samples();

  const DistributionProvider perfect = [](const TaskBatch& t) {
    Tensor out = Tensor::zeros({t.samples(), t.N});
    auto v = out.mutable_values();
    for (std::size_t s = 0; s < t.samples(); ++s) v[s * t.N + static_cast<std::size_t>(t.pseudo_labels[s])] = 1.0;
    return out;
  };
  const DistributionProvider uniform = [](const TaskBatch& t) {
    return Tensor::full({t.samples(), t.N}, 1.0 / static_cast<double>(t.N));
  };
  const double oracle_sigma = sigma_measure(perfect, suite, oracle).total;
  const double uniform_sigma = sigma_measure(uniform, suite, oracle).total;
  const double expected = static_cast<double>(samples) * std::log(static_cast<double>(g.N));
  const bool oracle_ok = oracle_sigma == 0.0;
  const bool uniform_ok = std::abs(uniform_sigma - expected) <= 1e-9;

  // Checkpoints: random initializations plus briefly trained models.
  std::vector<ParameterSet> models;
  EncoderConfig enc = g.encoder;
  enc.input_dim = blobs().dim();
  for (std::uint64_t seed = 0; seed < 6; ++seed) models.push_back(init_encoder(enc, seed));
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    GesslConfig short_run = g;
    short_run.episodes = 5;
    short_run.master_seed = seed;
    models.push_back(train(blobs(), short_run).params);
    models.push_back(train_baseline(blobs(), short_run).params);
  }
  std::vector<double> sigma, logprob;
  for (const ParameterSet& p : models) {
    sigma.push_back(sigma_measure(p, g.pi, suite, oracle).total);
    double lp = 0.0;
    for (const TaskBatch& t : suite) {
      const Tensor dist = task_distributions(p, t, g.pi);
      for (std::size_t s = 0; s < t.samples(); ++s)
        lp += std::log(std::max(dist.at(s, static_cast<std::size_t>(t.pseudo_labels[s])), 1e-12));
    }
    logprob.push_back(lp / static_cast<double>(samples));
  }
  std::size_t pairs = 0, agree = 0;
  for (std::size_t a = 0; a < models.size(); ++a) {
    for (std::size_t b = a + 1; b < models.size(); ++b) {
      ++pairs;
      const int by_sigma = (sigma[a] < sigma[b]) - (sigma[a] > sigma[b]);
      const int by_logprob = (logprob[a] > logprob[b]) - (logprob[a] < logprob[b]);
      if (by_sigma == by_logprob) ++agree;
    }
  }
  return {oracle_ok && uniform_ok && agree == pairs,
          fmt::format("oracle sigma {:g}; uniform sigma {:.12g} vs S ln N {:.12g} (S={}); ranking agrees on {}/{} pairs "
                      "of {} checkpoints",
                      oracle_sigma, uniform_sigma, expected, samples, agree, pairs, models.size())};
}

Verdict stop_gradient_contract() {
  GesslConfig g;
  EncoderConfig enc = g.encoder;
  enc.input_dim = blobs().dim();
  const ParameterSet theta = init_encoder(enc, 0);
  std::size_t compared = 0, mismatched = 0;
  const auto tasks = make_episode(blobs(), 4, g.N, g.A, g.augmentation, 0, 0);
  for (const TaskBatch& task : tasks) {
    const TaskAdaptResult adapted = adapt_task(theta, task, g);
    const ParameterSet& f_K = adapted.snapshot_K.params;
    const Tensor& stored = adapted.target_distributions;
    const Tensor constant(stored.shape(), std::vector<double>(stored.values().begin(), stored.values().end()));
    for (DistillKind kind : {DistillKind::kl, DistillKind::mse, DistillKind::cross_entropy}) {
      // Target produced live from tracked teacher weights on the same record.
      DiffRecord record;
      const ParameterSet current = track(record, f_K);
      const ParameterSet teacher = track(record, adapted.snapshot_K_plus_lambda.params);
      const Tensor live = task_distributions(teacher, task, g.pi);
      const GradientMap grads = record.backward(distill_loss_tensor(current, task, live, g.pi, kind));
      const Vector g_live = flatten(collect_gradients(grads, current));
      const Vector g_teacher = flatten(collect_gradients(grads, teacher));
      const Vector g_stored = flatten(distill_gradient(f_K, task, stored, g.pi, kind).second);
      const Vector g_const = flatten(distill_gradient(f_K, task, constant, g.pi, kind).second);
      compared += 3 * static_cast<std::size_t>(g_const.size());
      for (Eigen::Index i = 0; i < g_const.size(); ++i) {
        if (g_live[i] != g_const[i]) ++mismatched;
        if (g_stored[i] != g_const[i]) ++mismatched;
        if (g_teacher[i] != 0.0) ++mismatched;
      }
    }
    GesslConfig itd = g;
    itd.hypergrad = ItdUnrolled{};
    for (const GesslConfig& c : {g, itd}) {
      const Vector a = task_hypergradient(theta, f_K, task, stored, c).gradient;
      const Vector b = task_hypergradient(theta, f_K, task, constant, c).gradient;
      compared += static_cast<std::size_t>(a.size());
      for (Eigen::Index i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) ++mismatched;
    }
  }
  return {mismatched == 0, fmt::format("{} gradient entries compared element-wise, {} differ", compared, mismatched)};
}

Verdict task_invariant() {
  const GesslConfig g;
  std::size_t checked = 0, bad = 0;
  for (std::uint64_t episode = 0; checked < 1000; ++episode) {
    for (const TaskBatch& t : make_episode(blobs(), g.M, g.N, g.A, g.augmentation, 17, episode)) {
      ++checked;
      bool ok = t.N == g.N && t.A == g.A && t.views.rows() == g.N * g.A && t.pseudo_labels.size() == g.N * g.A;
      std::map<int, std::size_t> multiset;
      for (int l : t.pseudo_labels) ++multiset[l];
      ok = ok && multiset.size() == g.N;
      for (const auto& [label, count] : multiset) ok = ok && label >= 0 && label < static_cast<int>(g.N) && count == g.A;
      ok = ok && std::set<std::size_t>(t.source_indices.begin(), t.source_indices.end()).size() == g.N;
      try {
        validate_task(t);
      } catch (const std::exception&) {
        ok = false;
      }
      if (!ok) ++bad;
    }
  }
  return {bad == 0, fmt::format("{} tasks (N={}, A={}), {} violations", checked, g.N, g.A, bad)};
}

Verdict determinism_and_persistence() {
  const auto root = scratch_dir("determinism");
  ExperimentConfig config;
  config.gessl.episodes = 5;
  config.mode = RunMode::compare;
  config.seeds = {0, 1};
  config.output_dir = root / "a";
  run_experiment(config);
  config.output_dir = root / "b";
  run_experiment(config);

  std::size_t checkpoints = 0, identical = 0;
  for (const auto& entry : std::filesystem::directory_iterator(root / "a" / "checkpoints")) {
    ++checkpoints;
    if (read_bytes(entry.path()) == read_bytes(root / "b" / "checkpoints" / entry.path().filename())) ++identical;
  }
  const auto ma = read_metrics(root / "a" / "metrics.jsonl");
  const auto mb = read_metrics(root / "b" / "metrics.jsonl");
  bool metrics_equal = ma.size() == mb.size() && !ma.empty();
  for (std::size_t i = 0; metrics_equal && i < ma.size(); ++i) metrics_equal = ma[i].same_result(mb[i]);

  const auto ckpt = root / "a" / "checkpoints" / "gessl-seed0.gssl";
  const ParameterSet loaded = load_checkpoint(ckpt);
  const bool round_trip = encode_checkpoint(loaded) == read_bytes(ckpt);
  bool exact = true;
  const ParameterSet again = decode_checkpoint(encode_checkpoint(loaded));
  for (std::size_t i = 0; i < loaded.size(); ++i)
    for (std::size_t j = 0; j < loaded[i].value.size(); ++j) exact = exact && loaded[i].value[j] == again[i].value[j];

  const std::vector<char> bytes = read_bytes(ckpt);
  auto code_of = [](std::vector<char> data) {
    try {
      decode_checkpoint(data);
    } catch (const CheckpointError& e) {
      return static_cast<int>(e.code());
    }
    return -1;
  };
  auto magic = bytes;
  magic[1] ^= 0x20;
  auto version = bytes;
  version[4] = 2;
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  const int c_magic = code_of(magic), c_version = code_of(version), c_trunc = code_of(truncated);
  const bool errors_ok = c_magic == static_cast<int>(CheckpointErrorCode::bad_magic) &&
                         c_version == static_cast<int>(CheckpointErrorCode::bad_version) &&
                         c_trunc == static_cast<int>(CheckpointErrorCode::truncated);
  std::filesystem::remove_all(root);
  return {identical == checkpoints && checkpoints == 4 && metrics_equal && round_trip && exact && errors_ok,
          fmt::format("{}/{} checkpoints byte-identical; {} metrics records {}; round trip {}; "
                      "corruption errors magic/version/truncated {}",
                      identical, checkpoints, ma.size(), metrics_equal ? "identical" : "differ",
                      round_trip && exact ? "exact" : "inexact", errors_ok ? "distinct" : "wrong")};
}

Verdict distillation_menu() {
  std::string detail;
  bool pass = GesslConfig{}.distill == DistillKind::kl && parse_config("master_seed=0\n").gessl.distill == DistillKind::kl;
  detail += fmt::format("default {};", distill_name(parse_config("master_seed=0\n").gessl.distill));
  for (DistillKind kind : {DistillKind::kl, DistillKind::mse, DistillKind::cross_entropy}) {
    GesslConfig g;
    g.distill = kind;
    const TrainResult r = train(blobs(), g);
    bool finite = r.metrics.size() == g.episodes;
    for (const MetricsRecord& m : r.metrics) finite = finite && std::isfinite(m.distill_loss) && std::isfinite(m.inner_loss_mean);
    pass = pass && finite;
    detail += fmt::format(" {} {} episodes, final distill {:.4g} {};", distill_name(kind), r.metrics.size(),
                          r.metrics.empty() ? std::nan("") : r.metrics.back().distill_loss,
                          finite ? "finite" : "NOT finite");
  }
  return {pass, detail};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "gradient correctness", gradient_correctness},
      {2, "hypergradient oracles", hypergradient_oracles},
      {3, "outer-objective monotonicity", theorem_monotonicity},
      {4, "directional improvement over equal-budget SSL", directional_improvement},
      {5, "sigma-measurement soundness", sigma_soundness},
      {6, "stop-gradient contract", stop_gradient_contract},
      {7, "task-construction invariant", task_invariant},
      {8, "determinism and persistence", determinism_and_persistence},
      {9, "distillation-loss menu", distillation_menu},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!v.pass) ++failures;
    fmt::print("[{}] criterion {}: {} ({:.1f}s) {}\n", v.pass ? "PASS" : "FAIL", c.id, c.name, seconds, v.detail);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
