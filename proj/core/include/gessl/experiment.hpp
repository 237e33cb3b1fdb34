#pragma once

// Experiment orchestration: flat key=value configs, gessl / baseline runs,
// artifacts on disk, the hypergradient benchmark and the CLI entry point.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gessl/sigma_eval.hpp"
#include "gessl/taskgen.hpp"
#include "gessl/trainer.hpp"

namespace gessl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataKind { synthetic, raw, cifar };
enum class RunMode { gessl, baseline_ssl, compare };

const char* run_mode_name(RunMode mode);

struct ExperimentConfig {
  GesslConfig gessl;
  DataKind data = DataKind::synthetic;
  SyntheticSpec synthetic;
  std::uint64_t data_seed = 0;
  std::filesystem::path data_path;
  std::optional<std::size_t> data_limit;
  ProbeConfig probe;
  std::filesystem::path output_dir = "runs/default";
  RunMode mode = RunMode::gessl;
  std::vector<std::uint64_t> seeds;  // empty: master_seed only
  std::size_t eval_every = 0;        // probe cadence in outer steps; 0 = final only
  std::size_t eval_tasks = 8;        // task suite size for the sigma summary

  std::vector<std::uint64_t> run_seeds() const;
  void validate() const;
};

/// The recognized configuration keys, in snapshot order.
const std::vector<std::string>& config_keys();

ExperimentConfig parse_config(const std::string& text, const std::string& origin = "config");
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every key, one per line; parse_config(config_text(c)) reproduces c.
std::string config_text(const ExperimentConfig& config);

Dataset load_dataset(const ExperimentConfig& config);

/// Evaluation task suite for `seed`, disjoint in stream space from training.
std::vector<TaskBatch> eval_suite(const Dataset& dataset, const GesslConfig& config, std::uint64_t seed,
                                  std::size_t tasks);

struct RunOutcome {
  RunMode mode = RunMode::gessl;
  std::uint64_t seed = 0;
  ParameterSet params;
  std::vector<MetricsRecord> metrics;
  std::optional<double> linear_probe_acc;
  std::optional<double> knn_acc;
  double sigma_mean = 0.0;
};

/// Trains one model (mode gessl or baseline_ssl) for one seed and evaluates it.
RunOutcome run_single(const ExperimentConfig& config, const Dataset& dataset, RunMode mode, std::uint64_t seed);

struct ExperimentResult {
  std::filesystem::path output_dir;
  std::vector<RunOutcome> runs;
};

/// Runs every (mode, seed) of `config` and writes config.txt, metrics.jsonl,
/// metrics.csv, checkpoints/<mode>-seed<seed>.gssl, summary.csv and
/// summary.json under the output directory.
ExperimentResult run_experiment(const ExperimentConfig& config);
std::filesystem::path run_experiment(const std::filesystem::path& config_path);

struct BenchRow {
  std::size_t problem = 0;
  std::size_t dim = 0;
  std::string method;
  double relative_error = 0.0;
  std::size_t inner_evaluations = 0;
  std::size_t outer_evaluations = 0;
  int iterations = 0;
  double wall_ms = 0.0;
};

struct BenchOptions {
  std::size_t problems = 50;
  std::size_t max_dim = 16;
  std::uint64_t seed = 0;
  int neumann_terms = 200;
  double fd_epsilon_rel = 1e-3;
  double eig_lo = 1.0;
  double eig_hi = 2.0;
};

/// Runs every hypergradient strategy on a seeded SPD quadratic family and
/// scores each against the closed form.
std::vector<BenchRow> hypergrad_bench(const BenchOptions& options);
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

/// Command line entry: train, probe, sigma, hypergrad-bench, gradcheck,
/// gen-data. Returns the process exit code; usage errors return 2.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gessl
