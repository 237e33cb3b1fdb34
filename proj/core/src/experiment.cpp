#include "gessl/experiment.hpp"

#include <Eigen/Cholesky>
#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "gessl/checkpoint.hpp"
#include "gessl/hypergrad.hpp"
#include "gessl/metrics.hpp"
#include "json.hpp"

namespace gessl {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> parts;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += fmt::format("{}", items[i]);
  }
  return out;
}

struct RawEntry {
  std::string value;
  std::size_t line = 0;
};

class Reader {
 public:
  Reader(std::map<std::string, RawEntry> entries, std::string origin)
      : entries_(std::move(entries)), origin_(std::move(origin)) {}

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string str(const std::string& key, std::string fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second.value;
  }

  template <typename T>
  T number(const std::string& key, T fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    return parse<T>(key, it->second);
  }

  template <typename T>
  std::vector<T> list(const std::string& key, std::vector<T> fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<T> out;
    for (const std::string& part : split_list(it->second.value)) out.push_back(parse<T>(key, {part, it->second.line}));
    return out;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    const auto it = entries_.find(key);
    const std::size_t line = it == entries_.end() ? 0 : it->second.line;
    throw ConfigError(fmt::format("{}:{}: key '{}': {}", origin_, line, key, what));
  }

 private:
  template <typename T>
  T parse(const std::string& key, const RawEntry& entry) const {
    T value{};
    const char* begin = entry.value.data();
    const char* end = begin + entry.value.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end) fail(key, fmt::format("cannot parse '{}' as a number", entry.value));
    return value;
  }

  std::map<std::string, RawEntry> entries_;
  std::string origin_;
};

LossKind parse_loss(const Reader& r) {
  const std::string name = r.str("loss", "ntxent");
  if (name == "ntxent") return ContrastiveNtXent{r.number("ntxent_tau", ContrastiveNtXent{}.tau)};
  if (name == "barlow") return RedundancyBarlow{r.number("barlow_lambda", RedundancyBarlow{}.lambda_offdiag)};
  if (name == "align") return AlignCosine{};
  r.fail("loss", "expected one of ntxent, barlow, align; got '" + name + "'");
}

ClassHead parse_pi(const Reader& r) {
  const std::string name = r.str("pi", "prototype");
  if (name == "prototype") return PrototypeHead{r.number("pi_tau", PrototypeHead{}.tau)};
  if (name == "linear") return LinearHead{r.number<std::uint64_t>("pi_seed", 0)};
  r.fail("pi", "expected prototype or linear; got '" + name + "'");
}

HypergradKind parse_hypergrad(const Reader& r) {
  const std::string name = r.str("hypergrad", "aid_fd");
  if (name == "itd") return ItdUnrolled{};
  if (name == "aid_neumann") {
    return AidNeumann{r.number("neumann_terms", AidNeumann{}.terms), r.number("neumann_eta", AidNeumann{}.eta)};
  }
  if (name == "aid_cg") return AidCg{r.number("cg_iters", AidCg{}.iters), r.number("cg_tol", AidCg{}.tol)};
  if (name == "aid_fd") return AidFd{r.number("fd_epsilon_rel", AidFd{}.epsilon_rel)};
  if (name == "lookahead") {
    return Lookahead{r.number("lookahead_alpha", Lookahead{}.alpha_la),
                     r.number("lookahead_sync", Lookahead{}.sync_period)};
  }
  r.fail("hypergrad", "expected one of itd, aid_neumann, aid_cg, aid_fd, lookahead; got '" + name + "'");
}

DistillKind parse_distill(const Reader& r) {
  const std::string name = r.str("distill", "kl");
  if (name == "kl") return DistillKind::kl;
  if (name == "mse") return DistillKind::mse;
  if (name == "cross_entropy") return DistillKind::cross_entropy;
  r.fail("distill", "expected one of kl, mse, cross_entropy; got '" + name + "'");
}

const char* data_kind_name(DataKind kind) {
  switch (kind) {
    case DataKind::synthetic: return "synthetic";
    case DataKind::raw: return "raw";
    case DataKind::cifar: return "cifar";
  }
  return "unknown";
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

std::vector<RunMode> modes_of(RunMode mode) {
  if (mode == RunMode::compare) return {RunMode::gessl, RunMode::baseline_ssl};
  return {mode};
}

std::string optional_text(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

const char* run_mode_name(RunMode mode) {
  switch (mode) {
    case RunMode::gessl: return "gessl";
    case RunMode::baseline_ssl: return "baseline_ssl";
    case RunMode::compare: return "compare";
  }
  return "unknown";
}

std::vector<std::uint64_t> ExperimentConfig::run_seeds() const {
  return seeds.empty() ? std::vector<std::uint64_t>{gessl.master_seed} : seeds;
}

void ExperimentConfig::validate() const {
  gessl.validate();
  probe.validate();
  if (data == DataKind::synthetic) synthetic.validate();
  if (data != DataKind::synthetic && data_path.empty()) throw ConfigError("config: data_path is required for raw and cifar data");
  if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
  if (eval_tasks < 1) throw ConfigError("config: eval_tasks must be >= 1");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "master_seed",    "mode",          "output_dir",        "seeds",           "episodes",
      "M",              "N",             "A",                 "K",               "lambda",
      "alpha",          "beta",          "outer_momentum",    "outer_weight_decay", "baseline_lr",
      "loss",           "ntxent_tau",    "barlow_lambda",     "pi",              "pi_tau",
      "pi_seed",        "distill",       "hypergrad",         "neumann_terms",   "neumann_eta",
      "cg_iters",       "cg_tol",        "fd_epsilon_rel",    "lookahead_alpha", "lookahead_sync",
      "encoder_hidden", "embed_dim",     "proj_dim",          "aug_noise_sigma", "aug_dropout_p",
      "aug_scale_lo",   "aug_scale_hi",  "data",              "data_path",       "data_limit",
      "data_seed",      "synth_classes", "synth_per_class",   "synth_dim",       "synth_center_scale",
      "synth_within_sigma", "probe_epochs", "probe_lr",       "probe_l2",        "probe_k",
      "probe_seed",     "eval_every",    "eval_tasks",
  };
  return keys;
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  const std::set<std::string> known(config_keys().begin(), config_keys().end());
  std::map<std::string, RawEntry> entries;
  std::vector<std::string> unknown;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected key=value, got '{}'", origin, number, line));
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", origin, number));
    if (!known.count(key)) {
      unknown.push_back(key);
      continue;
    }
    if (!entries.emplace(key, RawEntry{value, number}).second) {
      throw ConfigError(fmt::format("{}:{}: duplicate key '{}'", origin, number, key));
    }
  }
  if (!unknown.empty()) throw ConfigError(fmt::format("{}: unknown config key(s): {}", origin, join(unknown)));
  if (!entries.count("master_seed")) throw ConfigError(fmt::format("{}: missing required key 'master_seed'", origin));

  const Reader r(std::move(entries), origin);
  ExperimentConfig c;
  GesslConfig& g = c.gessl;
  g.master_seed = r.number<std::uint64_t>("master_seed", 0);
  g.episodes = r.number("episodes", g.episodes);
  g.M = r.number("M", g.M);
  g.N = r.number("N", g.N);
  g.A = r.number("A", g.A);
  g.K = r.number("K", g.K);
  g.lambda_extra = r.number("lambda", g.lambda_extra);
  g.alpha = r.number("alpha", g.alpha);
  g.beta = r.number("beta", g.beta);
  g.outer_momentum = r.number("outer_momentum", g.outer_momentum);
  g.outer_weight_decay = r.number("outer_weight_decay", g.outer_weight_decay);
  g.baseline_lr = r.number("baseline_lr", g.baseline_lr);
  g.loss = parse_loss(r);
  g.pi = parse_pi(r);
  g.distill = parse_distill(r);
  g.hypergrad = parse_hypergrad(r);
  g.encoder.hidden_dims = r.list("encoder_hidden", g.encoder.hidden_dims);
  g.encoder.embed_dim = r.number("embed_dim", g.encoder.embed_dim);
  g.encoder.proj_dim = r.number("proj_dim", g.encoder.proj_dim);
  g.augmentation.noise_sigma = r.number("aug_noise_sigma", g.augmentation.noise_sigma);
  g.augmentation.dropout_p = r.number("aug_dropout_p", g.augmentation.dropout_p);
  g.augmentation.scale_lo = r.number("aug_scale_lo", g.augmentation.scale_lo);
  g.augmentation.scale_hi = r.number("aug_scale_hi", g.augmentation.scale_hi);

  const std::string mode = r.str("mode", "gessl");
  if (mode == "gessl") c.mode = RunMode::gessl;
  else if (mode == "baseline_ssl") c.mode = RunMode::baseline_ssl;
  else if (mode == "compare") c.mode = RunMode::compare;
  else r.fail("mode", "expected gessl, baseline_ssl or compare; got '" + mode + "'");
  c.output_dir = r.str("output_dir", c.output_dir.string());
  c.seeds = r.list<std::uint64_t>("seeds", {});

  const std::string data = r.str("data", "synthetic");
  if (data == "synthetic") c.data = DataKind::synthetic;
  else if (data == "raw") c.data = DataKind::raw;
  else if (data == "cifar") c.data = DataKind::cifar;
  else r.fail("data", "expected synthetic, raw or cifar; got '" + data + "'");
  c.data_path = r.str("data_path", "");
  if (r.has("data_limit")) c.data_limit = r.number<std::size_t>("data_limit", 0);
  c.data_seed = r.number("data_seed", c.data_seed);
  c.synthetic.classes = r.number("synth_classes", c.synthetic.classes);
  c.synthetic.per_class = r.number("synth_per_class", c.synthetic.per_class);
  c.synthetic.dim = r.number("synth_dim", c.synthetic.dim);
  c.synthetic.center_scale = r.number("synth_center_scale", c.synthetic.center_scale);
  c.synthetic.within_sigma = r.number("synth_within_sigma", c.synthetic.within_sigma);

  c.probe.epochs = r.number("probe_epochs", c.probe.epochs);
  c.probe.lr = r.number("probe_lr", c.probe.lr);
  c.probe.l2 = r.number("probe_l2", c.probe.l2);
  c.probe.k = r.number("probe_k", c.probe.k);
  c.probe.seed = r.number("probe_seed", c.probe.seed);
  c.eval_every = r.number("eval_every", c.eval_every);
  c.eval_tasks = r.number("eval_tasks", c.eval_tasks);

  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("{}: {}", origin, e.what()));
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string config_text(const ExperimentConfig& c) {
  const GesslConfig& g = c.gessl;
  std::map<std::string, std::string> v;
  v["master_seed"] = std::to_string(g.master_seed);
  v["mode"] = run_mode_name(c.mode);
  v["output_dir"] = c.output_dir.string();
  v["seeds"] = join(c.seeds);
  v["episodes"] = std::to_string(g.episodes);
  v["M"] = std::to_string(g.M);
  v["N"] = std::to_string(g.N);
  v["A"] = std::to_string(g.A);
  v["K"] = std::to_string(g.K);
  v["lambda"] = std::to_string(g.lambda_extra);
  v["alpha"] = format_double(g.alpha);
  v["beta"] = format_double(g.beta);
  v["outer_momentum"] = format_double(g.outer_momentum);
  v["outer_weight_decay"] = format_double(g.outer_weight_decay);
  v["baseline_lr"] = format_double(g.baseline_lr);
  v["loss"] = loss_name(g.loss);
  const auto* nt = std::get_if<ContrastiveNtXent>(&g.loss);
  const auto* bt = std::get_if<RedundancyBarlow>(&g.loss);
  v["ntxent_tau"] = format_double(nt ? nt->tau : ContrastiveNtXent{}.tau);
  v["barlow_lambda"] = format_double(bt ? bt->lambda_offdiag : RedundancyBarlow{}.lambda_offdiag);
  const auto* proto = std::get_if<PrototypeHead>(&g.pi);
  const auto* lin = std::get_if<LinearHead>(&g.pi);
  v["pi"] = proto ? "prototype" : "linear";
  v["pi_tau"] = format_double(proto ? proto->tau : PrototypeHead{}.tau);
  v["pi_seed"] = std::to_string(lin ? lin->seed : 0);
  v["distill"] = distill_name(g.distill);
  v["hypergrad"] = hypergrad_name(g.hypergrad);
  const auto* nm = std::get_if<AidNeumann>(&g.hypergrad);
  const auto* cg = std::get_if<AidCg>(&g.hypergrad);
  const auto* fd = std::get_if<AidFd>(&g.hypergrad);
  const auto* la = std::get_if<Lookahead>(&g.hypergrad);
  v["neumann_terms"] = std::to_string(nm ? nm->terms : AidNeumann{}.terms);
  v["neumann_eta"] = format_double(nm ? nm->eta : AidNeumann{}.eta);
  v["cg_iters"] = std::to_string(cg ? cg->iters : AidCg{}.iters);
  v["cg_tol"] = format_double(cg ? cg->tol : AidCg{}.tol);
  v["fd_epsilon_rel"] = format_double(fd ? fd->epsilon_rel : AidFd{}.epsilon_rel);
  v["lookahead_alpha"] = format_double(la ? la->alpha_la : Lookahead{}.alpha_la);
  v["lookahead_sync"] = std::to_string(la ? la->sync_period : Lookahead{}.sync_period);
  v["encoder_hidden"] = join(g.encoder.hidden_dims);
  v["embed_dim"] = std::to_string(g.encoder.embed_dim);
  v["proj_dim"] = std::to_string(g.encoder.proj_dim);
  v["aug_noise_sigma"] = format_double(g.augmentation.noise_sigma);
  v["aug_dropout_p"] = format_double(g.augmentation.dropout_p);
  v["aug_scale_lo"] = format_double(g.augmentation.scale_lo);
  v["aug_scale_hi"] = format_double(g.augmentation.scale_hi);
  v["data"] = data_kind_name(c.data);
  v["data_path"] = c.data_path.string();
  v["data_limit"] = c.data_limit ? std::to_string(*c.data_limit) : "";
  v["data_seed"] = std::to_string(c.data_seed);
  v["synth_classes"] = std::to_string(c.synthetic.classes);
  v["synth_per_class"] = std::to_string(c.synthetic.per_class);
  v["synth_dim"] = std::to_string(c.synthetic.dim);
  v["synth_center_scale"] = format_double(c.synthetic.center_scale);
  v["synth_within_sigma"] = format_double(c.synthetic.within_sigma);
  v["probe_epochs"] = std::to_string(c.probe.epochs);
  v["probe_lr"] = format_double(c.probe.lr);
  v["probe_l2"] = format_double(c.probe.l2);
  v["probe_k"] = std::to_string(c.probe.k);
  v["probe_seed"] = std::to_string(c.probe.seed);
  v["eval_every"] = std::to_string(c.eval_every);
  v["eval_tasks"] = std::to_string(c.eval_tasks);

  std::string out;
  for (const std::string& key : config_keys()) {
    const std::string& value = v.at(key);
    if (value.empty()) continue;  // unset optional
    out += key + '=' + value + '\n';
  }
  return out;
}

Dataset load_dataset(const ExperimentConfig& config) {
  switch (config.data) {
    case DataKind::synthetic: return generate_synthetic(config.synthetic, config.data_seed);
    case DataKind::raw: {
      Dataset d = load_raw_dataset(config.data_path);
      if (config.data_limit && *config.data_limit < d.rows()) {
        const std::size_t n = *config.data_limit;
        const auto values = d.features.values().first(n * d.dim());
        Dataset cut{Tensor({n, d.dim()}, std::vector<double>(values.begin(), values.end())), std::nullopt, d.name};
        if (d.true_labels) cut.true_labels = std::vector<int>(d.true_labels->begin(), d.true_labels->begin() + static_cast<std::ptrdiff_t>(n));
        return cut;
      }
      return d;
    }
    case DataKind::cifar: return load_cifar10_batch(config.data_path, config.data_limit);
  }
  throw ConfigError("unknown data kind");
}

std::vector<TaskBatch> eval_suite(const Dataset& dataset, const GesslConfig& config, std::uint64_t seed,
                                  std::size_t tasks) {
  std::vector<TaskBatch> suite;
  suite.reserve(tasks);
  for (std::size_t t = 0; t < tasks; ++t) {
    RngStream rng = RngStream::derive(seed, StreamPurpose::eval, {t});
    suite.push_back(make_task(dataset, config.N, config.A, config.augmentation, rng));
  }
  return suite;
}

RunOutcome run_single(const ExperimentConfig& config, const Dataset& dataset, RunMode mode, std::uint64_t seed) {
  if (mode == RunMode::compare) throw std::invalid_argument("run_single: pick gessl or baseline_ssl");
  GesslConfig g = config.gessl;
  g.master_seed = seed;
  const std::vector<TaskBatch> suite = eval_suite(dataset, g, seed, config.eval_tasks);
  const OracleLabeler oracle = OracleLabeler::from_tasks(suite);

  auto probe = [&](const ParameterSet& params) -> std::optional<double> {
    if (!dataset.true_labels) return std::nullopt;
    return linear_probe(embed_dataset(params, dataset), *dataset.true_labels, config.probe);
  };
  StepObserver observer;
  if (config.eval_every > 0) {
    observer = [&](MetricsRecord& record, const ParameterSet& params) {
      if (record.step % config.eval_every != 0) return;
      record.probe_acc = probe(params);
      record.sigma_mean = sigma_measure(params, g.pi, suite, oracle).per_sample_mean;
    };
  }

  TrainResult trained = mode == RunMode::gessl ? train(dataset, g, observer) : train_baseline(dataset, g, observer);
  RunOutcome out;
  out.mode = mode;
  out.seed = seed;
  out.params = std::move(trained.params);
  out.metrics = std::move(trained.metrics);
  if (dataset.true_labels) {
    const Eigen::MatrixXd features = embed_dataset(out.params, dataset);
    out.linear_probe_acc = linear_probe(features, *dataset.true_labels, config.probe);
    out.knn_acc = knn_eval(features, *dataset.true_labels, config.probe.k);
  }
  out.sigma_mean = sigma_measure(out.params, g.pi, suite, oracle).per_sample_mean;
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const std::filesystem::path dir = config.output_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir / "checkpoints", ec);
  {
    std::ofstream snapshot(dir / "config.txt");
    if (ec || !snapshot) throw std::runtime_error("output directory is not writable: " + dir.string());
    snapshot << config_text(config);
  }

  const Dataset dataset = load_dataset(config);
  ExperimentResult result;
  result.output_dir = dir;
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + (dir / "metrics.jsonl").string());
  for (RunMode mode : modes_of(config.mode)) {
    for (std::uint64_t seed : config.run_seeds()) {
      RunOutcome run = run_single(config, dataset, mode, seed);
      for (const MetricsRecord& record : run.metrics) emit_metrics(record, metrics);
      save_checkpoint(run.params, dir / "checkpoints" / fmt::format("{}-seed{}.gssl", run_mode_name(mode), seed));
      result.runs.push_back(std::move(run));
    }
  }
  metrics.close();
  export_csv(dir);

  std::ofstream csv(dir / "summary.csv");
  csv << "mode,seed,linear_probe_acc,knn_acc,sigma_mean\n";
  nlohmann::json summary;
  summary["dataset"] = dataset.name;
  summary["runs"] = nlohmann::json::array();
  for (const RunOutcome& run : result.runs) {
    csv << run_mode_name(run.mode) << ',' << run.seed << ',' << optional_text(run.linear_probe_acc) << ','
        << optional_text(run.knn_acc) << ',' << format_double(run.sigma_mean) << '\n';
    summary["runs"].push_back({{"mode", run_mode_name(run.mode)},
                               {"seed", run.seed},
                               {"linear_probe_acc", optional_json(run.linear_probe_acc)},
                               {"knn_acc", optional_json(run.knn_acc)},
                               {"sigma_mean", run.sigma_mean}});
  }
  for (RunMode mode : modes_of(config.mode)) {
    double probe_sum = 0.0, knn_sum = 0.0, sigma_sum = 0.0;
    std::size_t count = 0, labeled = 0;
    for (const RunOutcome& run : result.runs) {
      if (run.mode != mode) continue;
      ++count;
      sigma_sum += run.sigma_mean;
      if (run.linear_probe_acc) {
        ++labeled;
        probe_sum += *run.linear_probe_acc;
        knn_sum += run.knn_acc.value_or(0.0);
      }
    }
    const std::optional<double> probe_mean = labeled ? std::optional<double>(probe_sum / static_cast<double>(labeled)) : std::nullopt;
    const std::optional<double> knn_mean = labeled ? std::optional<double>(knn_sum / static_cast<double>(labeled)) : std::nullopt;
    const double sigma_mean = sigma_sum / static_cast<double>(count);
    csv << run_mode_name(mode) << ",mean," << optional_text(probe_mean) << ',' << optional_text(knn_mean) << ','
        << format_double(sigma_mean) << '\n';
    summary["means"][run_mode_name(mode)] = {{"linear_probe_acc", optional_json(probe_mean)},
                                             {"knn_acc", optional_json(knn_mean)},
                                             {"sigma_mean", sigma_mean}};
  }
  std::ofstream(dir / "summary.json") << summary.dump(2) << '\n';
  return result;
}

std::filesystem::path run_experiment(const std::filesystem::path& config_path) {
  return run_experiment(load_config(config_path)).output_dir;
}

std::vector<BenchRow> hypergrad_bench(const BenchOptions& options) {
  std::vector<BenchRow> rows;
  const auto family = quadratic_family(options.problems, options.max_dim, options.seed, options.eig_lo, options.eig_hi);
  for (std::size_t p = 0; p < family.size(); ++p) {
    const QuadraticInstance& inst = family[p];
    const Vector exact = quadratic_oracle(inst.A, inst.b, inst.c, inst.theta);
    const Vector phi_star = inst.theta - inst.A.ldlt().solve(inst.b);
    const auto d = static_cast<int>(inst.b.size());
    const double lr = 2.0 / (inst.eig_min + inst.eig_max);
    const BilevelProblem problem = make_quadratic_problem(inst, kMaxUnrolledSteps, lr);

    auto record = [&](std::string method, auto&& compute) {
      const auto start = std::chrono::steady_clock::now();
      const HypergradResult hg = compute();
      rows.push_back({p, static_cast<std::size_t>(d), std::move(method), relative_error(hg.gradient, exact),
                      hg.inner_evaluations, hg.outer_evaluations, hg.iterations, elapsed_ms(start)});
    };
    record("itd", [&] { return hypergrad_itd(problem, inst.theta); });
    record("aid_neumann", [&] {
      return hypergrad_aid_neumann(problem, inst.theta, phi_star, options.neumann_terms, 1.0 / inst.eig_max);
    });
    record("aid_cg", [&] { return hypergrad_aid_cg(problem, inst.theta, phi_star, d, 1e-13); });
    record("aid_fd", [&] { return hypergrad_aid_fd(problem, inst.theta, phi_star, options.fd_epsilon_rel); });
    record("first_order", [&] { return hypergrad_first_order(problem, inst.theta, phi_star); });
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "problem,dim,method,relative_error,inner_evaluations,outer_evaluations,iterations,wall_ms\n";
  for (const BenchRow& r : rows) {
    out << r.problem << ',' << r.dim << ',' << r.method << ',' << format_double(r.relative_error) << ','
        << r.inner_evaluations << ',' << r.outer_evaluations << ',' << r.iterations << ',' << format_double(r.wall_ms)
        << '\n';
  }
}

}  // namespace gessl
