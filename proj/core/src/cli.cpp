#include <fmt/format.h>

#include <fstream>
#include <ostream>

#include "CLI11.hpp"
#include "gessl/checkpoint.hpp"
#include "gessl/experiment.hpp"
#include "gessl/gradcheck_suite.hpp"
#include "gessl/metrics.hpp"

namespace gessl {

namespace {

struct DataArgs {
  std::string data;
  std::string cifar;
  std::size_t limit = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--data", data, "Dataset in the GSDS raw format");
    cmd->add_option("--cifar", cifar, "CIFAR-10 binary batch");
    cmd->add_option("--limit", limit, "Keep only the first rows");
  }

  Dataset load() const {
    if (data.empty() == cifar.empty()) throw CLI::ValidationError("exactly one of --data and --cifar is required");
    const std::optional<std::size_t> keep = limit ? std::optional<std::size_t>(limit) : std::nullopt;
    if (!cifar.empty()) return load_cifar10_batch(cifar, keep);
    ExperimentConfig c;
    c.data = DataKind::raw;
    c.data_path = data;
    c.data_limit = keep;
    return load_dataset(c);
  }
};

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-motivated bi-level self-supervised learning at desk scale", "gessl"};
  app.require_subcommand(1);

  std::string config_path, output_override;
  auto* train_cmd = app.add_subcommand("train", "Run an experiment from a key=value config");
  train_cmd->add_option("--config", config_path, "Config file")->required();
  train_cmd->add_option("--output", output_override, "Override output_dir");

  SyntheticSpec spec;
  std::uint64_t gen_seed = 0;
  std::string gen_output;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic blobs dataset in the raw format");
  gen_cmd->add_option("--classes", spec.classes, "Number of classes");
  gen_cmd->add_option("--per-class", spec.per_class, "Samples per class");
  gen_cmd->add_option("--dim", spec.dim, "Feature dimension");
  gen_cmd->add_option("--center-scale", spec.center_scale, "Scale of the class centers");
  gen_cmd->add_option("--within-sigma", spec.within_sigma, "Within-class standard deviation");
  gen_cmd->add_option("--seed", gen_seed, "Generator seed");
  gen_cmd->add_option("--output", gen_output, "Output path")->default_val("data.gsds");

  DataArgs probe_data;
  ProbeConfig probe;
  std::string probe_ckpt;
  auto* probe_cmd = app.add_subcommand("probe", "Linear probe and k-NN accuracy of a checkpoint");
  probe_cmd->add_option("--checkpoint", probe_ckpt, "Checkpoint file")->required();
  probe_data.attach(probe_cmd);
  probe_cmd->add_option("--epochs", probe.epochs, "Linear probe epochs");
  probe_cmd->add_option("--lr", probe.lr, "Linear probe learning rate");
  probe_cmd->add_option("--l2", probe.l2, "Linear probe l2 penalty");
  probe_cmd->add_option("--k", probe.k, "Neighbors for k-NN");
  probe_cmd->add_option("--seed", probe.seed, "Split seed");

  DataArgs sigma_data;
  std::vector<std::string> sigma_ckpts;
  std::size_t sigma_tasks = 16, sigma_n = 16, sigma_a = 2;
  std::uint64_t sigma_seed = 0;
  std::string sigma_pi = "prototype", radar_path;
  double sigma_tau = PrototypeHead{}.tau;
  auto* sigma_cmd = app.add_subcommand("sigma", "Sigma measurement over a sampled task suite");
  sigma_cmd->add_option("--checkpoint", sigma_ckpts, "Checkpoint file(s)")->required();
  sigma_data.attach(sigma_cmd);
  sigma_cmd->add_option("--tasks", sigma_tasks, "Tasks in the suite");
  sigma_cmd->add_option("--N", sigma_n, "Classes per task");
  sigma_cmd->add_option("--A", sigma_a, "Views per class");
  sigma_cmd->add_option("--seed", sigma_seed, "Suite seed");
  sigma_cmd->add_option("--pi", sigma_pi, "Class head")->check(CLI::IsMember({"prototype", "linear"}));
  sigma_cmd->add_option("--tau", sigma_tau, "Prototype head temperature");
  sigma_cmd->add_option("--radar", radar_path, "Write a radar CSV");

  BenchOptions bench;
  std::string bench_output;
  auto* bench_cmd = app.add_subcommand("hypergrad-bench", "Hypergradient strategies on SPD quadratic problems");
  bench_cmd->add_option("--problems", bench.problems, "Number of problems");
  bench_cmd->add_option("--max-dim", bench.max_dim, "Largest dimension");
  bench_cmd->add_option("--seed", bench.seed, "Family seed");
  bench_cmd->add_option("--terms", bench.neumann_terms, "Neumann terms");
  bench_cmd->add_option("--epsilon-rel", bench.fd_epsilon_rel, "AID-FD relative step");
  bench_cmd->add_option("--output", bench_output, "CSV path (stdout when omitted)");

  std::size_t gc_points = 100;
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-6;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every tensor op");
  gc_cmd->add_option("--points", gc_points, "Points per op");
  gc_cmd->add_option("--seed", gc_seed, "Seed");
  gc_cmd->add_option("--tolerance", gc_tol, "Largest accepted relative error");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (train_cmd->parsed()) {
      ExperimentConfig config = load_config(config_path);
      if (!output_override.empty()) config.output_dir = output_override;
      const ExperimentResult result = run_experiment(config);
      for (const RunOutcome& run : result.runs) {
        out << fmt::format("{} seed={} linear_probe_acc={} knn_acc={} sigma_mean={}\n", run_mode_name(run.mode),
                           run.seed, run.linear_probe_acc ? format_double(*run.linear_probe_acc) : "n/a",
                           run.knn_acc ? format_double(*run.knn_acc) : "n/a", format_double(run.sigma_mean));
      }
      out << "artifacts: " << result.output_dir.string() << '\n';
      return 0;
    }
    if (gen_cmd->parsed()) {
      const Dataset dataset = generate_synthetic(spec, gen_seed);
      save_raw_dataset(dataset, gen_output);
      out << fmt::format("wrote {} rows x {} features to {}\n", dataset.rows(), dataset.dim(), gen_output);
      return 0;
    }
    if (probe_cmd->parsed()) {
      const Dataset dataset = probe_data.load();
      if (!dataset.true_labels) {
        err << "error: the dataset has no labels to probe against\n";
        return 1;
      }
      const Eigen::MatrixXd features = embed_dataset(load_checkpoint(probe_ckpt), dataset);
      out << "linear_probe_acc=" << format_double(linear_probe(features, *dataset.true_labels, probe)) << '\n';
      out << "knn_acc=" << format_double(knn_eval(features, *dataset.true_labels, probe.k)) << '\n';
      return 0;
    }
    if (sigma_cmd->parsed()) {
      const Dataset dataset = sigma_data.load();
      GesslConfig g;
      g.N = sigma_n;
      g.A = sigma_a;
      const ClassHead pi = sigma_pi == "linear" ? ClassHead(LinearHead{sigma_seed}) : ClassHead(PrototypeHead{sigma_tau});
      const std::vector<TaskBatch> suite = eval_suite(dataset, g, sigma_seed, sigma_tasks);
      const OracleLabeler oracle = OracleLabeler::from_tasks(suite);
      std::vector<RadarEntry> entries;
      for (const std::string& path : sigma_ckpts) {
        const SigmaReport report = sigma_measure(load_checkpoint(path), pi, suite, oracle);
        out << fmt::format("{} sigma_total={} sigma_mean={} tasks={} samples={}\n", path, format_double(report.total),
                           format_double(report.per_sample_mean), report.tasks, report.samples);
        entries.push_back({path, fmt::format("seed{}-tasks{}", sigma_seed, sigma_tasks), report});
      }
      if (!radar_path.empty()) write_radar_csv(radar_path, entries);
      return 0;
    }
    if (bench_cmd->parsed()) {
      const std::vector<BenchRow> rows = hypergrad_bench(bench);
      if (bench_output.empty()) {
        write_bench_csv(out, rows);
      } else {
        std::ofstream file(bench_output);
        if (!file) throw std::runtime_error("cannot write " + bench_output);
        write_bench_csv(file, rows);
        out << "wrote " << bench_output << '\n';
      }
      return 0;
    }
    if (gc_cmd->parsed()) {
      bool ok = true;
      for (const OpCheckResult& r : run_gradcheck_suite(gc_points, gc_seed)) {
        const bool pass = r.max_error <= gc_tol;
        ok = ok && pass;
        out << fmt::format("{:<22} points={} max_rel_err={:.3e} {}\n", r.name, r.points, r.max_error,
                           pass ? "ok" : "FAIL");
      }
      return ok ? 0 : 1;
    }
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace gessl
