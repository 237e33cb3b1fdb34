#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "gessl/checkpoint.hpp"
#include "gessl/experiment.hpp"
#include "gessl/metrics.hpp"
#include "temp_dir.hpp"

using namespace gessl;
using gessl::testing::TempDir;

namespace {

std::string small_run_config(const std::filesystem::path& out, const std::string& extra = "") {
  return "master_seed=3\n"
         "output_dir=" + out.string() + "\n"
         "episodes=2\nM=2\nN=8\nlambda=2\n"
         "encoder_hidden=8\nembed_dim=4\nproj_dim=4\n"
         "synth_per_class=20\nprobe_epochs=20\neval_tasks=2\n" + extra;
}

int run_cli(const std::vector<std::string>& args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = cli_dispatch(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

}  // namespace

TEST(Config, ParsesKeysCommentsAndLists) {
  const ExperimentConfig c = parse_config(
      "# comment\nmaster_seed = 11\n\nK=2\nlambda=4\nencoder_hidden=32, 16\nseeds=0,1,2\n"
      "distill=mse\nhypergrad=aid_cg\ncg_iters=7\nloss=barlow\nbarlow_lambda=0.01\nmode=compare\n");
  EXPECT_EQ(c.gessl.master_seed, 11u);
  EXPECT_EQ(c.gessl.K, 2u);
  EXPECT_EQ(c.gessl.lambda_extra, 4u);
  EXPECT_EQ(c.gessl.encoder.hidden_dims, (std::vector<std::size_t>{32, 16}));
  EXPECT_EQ(c.run_seeds(), (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_EQ(c.gessl.distill, DistillKind::mse);
  ASSERT_TRUE(std::holds_alternative<AidCg>(c.gessl.hypergrad));
  EXPECT_EQ(std::get<AidCg>(c.gessl.hypergrad).iters, 7);
  ASSERT_TRUE(std::holds_alternative<RedundancyBarlow>(c.gessl.loss));
  EXPECT_EQ(std::get<RedundancyBarlow>(c.gessl.loss).lambda_offdiag, 0.01);
  EXPECT_EQ(c.mode, RunMode::compare);
}

TEST(Config, DefaultsMatchTrainerDefaults) {
  const ExperimentConfig c = parse_config("master_seed=0\n");
  EXPECT_EQ(c.gessl.distill, DistillKind::kl);
  EXPECT_TRUE(std::holds_alternative<AidFd>(c.gessl.hypergrad));
  EXPECT_TRUE(std::holds_alternative<ContrastiveNtXent>(c.gessl.loss));
  EXPECT_EQ(c.run_seeds(), (std::vector<std::uint64_t>{0}));
}

TEST(Config, MissingMasterSedIsNamed) {
  try {
    parse_config("K=1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("master_seed"), std::string::npos);
  }
}

TEST(Config, UnknownKeysAreAllListed) {
  try {
    parse_config("master_seed=0\nbogus=1\nalso_bad=2\n");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bogus"), std::string::npos);
    EXPECT_NE(msg.find("also_bad"), std::string::npos);
  }
}

TEST(Config, MalformedLinesAndValues) {
  EXPECT_THROW(parse_config("master_seed=0\nK\n"), ConfigError);
  EXPECT_THROW(parse_config("master_seed=0\nK=1\nK=2\n"), ConfigError);
  EXPECT_THROW(parse_config("master_seed=0\nalpha=fast\n"), ConfigError);
  EXPECT_THROW(parse_config("master_seed=0\ndistill=js\n"), ConfigError);
  EXPECT_THROW(parse_config("master_seed=0\nlambda=0\n"), ConfigError);
  EXPECT_THROW(parse_config("master_seed=0\ndata=raw\n"), ConfigError);
}

TEST(Config, SnapshotRoundTrips) {
  const ExperimentConfig c = parse_config(
      "master_seed=5\nalpha=0.003\nhypergrad=lookahead\nlookahead_alpha=0.25\npi=linear\npi_seed=4\n"
      "seeds=4,5\ndata_limit=100\n");
  const std::string text = config_text(c);
  EXPECT_EQ(config_text(parse_config(text)), text);
  EXPECT_NE(text.find("alpha=0.0030000000000000001"), std::string::npos);
  for (const std::string& key : {"master_seed", "lambda", "distill", "hypergrad"}) {
    EXPECT_NE(text.find(key + std::string("=")), std::string::npos) << key;
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  TempDir dir("ckpt");
  ParameterSet p = init_encoder({5, {7}, 3, 2}, 1);
  p.add("extra", Tensor::matrix({{std::numeric_limits<double>::denorm_min(), -0.0, 1e300}}));
  save_checkpoint(p, dir / "a.gssl");
  const ParameterSet back = load_checkpoint(dir / "a.gssl");
  ASSERT_TRUE(back.same_layout(p));
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p[i].value.size(); ++j) EXPECT_EQ(back[i].value[j], p[i].value[j]);
  EXPECT_TRUE(std::signbit(back.get("extra")[1]));
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(p));
}

TEST(Checkpoint, DistinctErrors) {
  const std::vector<char> bytes = encode_checkpoint(init_encoder({3, {}, 2, 2}, 0));
  auto code_of = [](const std::vector<char>& data) {
    try {
      decode_checkpoint(data);
    } catch (const CheckpointError& e) {
      return static_cast<int>(e.code());
    }
    return -1;
  };
  auto magic = bytes;
  magic[0] ^= 0x01;
  EXPECT_EQ(code_of(magic), static_cast<int>(CheckpointErrorCode::bad_magic));
  auto version = bytes;
  version[4] = 2;
  EXPECT_EQ(code_of(version), static_cast<int>(CheckpointErrorCode::bad_version));
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_EQ(code_of(truncated), static_cast<int>(CheckpointErrorCode::truncated));
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_EQ(code_of(trailing), static_cast<int>(CheckpointErrorCode::malformed));
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.gssl"), CheckpointError);
}

TEST(Metrics, JsonLineRoundTripAndKeyOrder) {
  MetricsRecord r;
  r.step = 4;
  r.episode = 3;
  r.seed = 9;
  r.mode = "baseline_ssl";
  r.inner_loss_mean = 0.1;
  r.distill_loss = 1.0 / 3.0;
  r.outer_grad_norm = 12.5;
  r.probe_acc = 0.875;
  r.wall_ms = 3.25;
  const std::string line = to_json_line(r);
  EXPECT_EQ(line.find("{\"step\":4,\"episode\":3,\"seed\":9,\"mode\":\"baseline_ssl\""), 0u);
  EXPECT_NE(line.find("0.33333333333333331"), std::string::npos);
  EXPECT_NE(line.find("\"sigma_mean\":null"), std::string::npos);
  const MetricsRecord back = parse_json_line(line);
  EXPECT_TRUE(back.same_result(r));
  EXPECT_EQ(back.wall_ms, r.wall_ms);
}

TEST(Metrics, SeventeenDigitsRoundTripDoubles) {
  for (double v : {0.1, 1.0 / 3.0, 2.0 / 7.0, 1e-300, 123456789.123456789}) {
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(std::nan("")), "null");
}

TEST(Metrics, CsvRowsMatchJsonlLinesAndErrorsCarryLineNumbers) {
  TempDir dir("metrics");
  {
    std::ofstream out(dir / "metrics.jsonl");
    for (int i = 0; i < 5; ++i) {
      MetricsRecord r;
      r.step = static_cast<std::uint64_t>(i + 1);
      emit_metrics(r, out);
    }
  }
  EXPECT_EQ(export_csv(dir.path()), 5u);
  std::ifstream csv(dir / "metrics.csv");
  std::size_t lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  EXPECT_EQ(lines, 6u);

  std::ofstream(dir / "metrics.jsonl", std::ios::app) << "{not json\n";
  try {
    read_metrics(dir / "metrics.jsonl");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("metrics.jsonl:6"), std::string::npos) << e.what();
  }
}

TEST(Experiment, WritesArtifactsAndIsDeterministic) {
  TempDir dir("experiment");
  const ExperimentConfig a = parse_config(small_run_config(dir / "a", "mode=compare\nseeds=0,1\n"));
  const ExperimentConfig b = parse_config(small_run_config(dir / "b", "mode=compare\nseeds=0,1\n"));
  const ExperimentResult ra = run_experiment(a);
  run_experiment(b);
  ASSERT_EQ(ra.runs.size(), 4u);
  for (const char* name : {"config.txt", "metrics.jsonl", "metrics.csv", "summary.csv", "summary.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "a" / name)) << name;
  }
  for (const char* ckpt : {"gessl-seed0.gssl", "gessl-seed1.gssl", "baseline_ssl-seed0.gssl", "baseline_ssl-seed1.gssl"}) {
    const auto pa = dir / "a" / "checkpoints" / ckpt;
    const auto pb = dir / "b" / "checkpoints" / ckpt;
    ASSERT_TRUE(std::filesystem::exists(pa)) << ckpt;
    EXPECT_EQ(gessl::testing::read_bytes(pa), gessl::testing::read_bytes(pb)) << ckpt;
  }
  const auto ma = read_metrics(dir / "a" / "metrics.jsonl");
  const auto mb = read_metrics(dir / "b" / "metrics.jsonl");
  ASSERT_EQ(ma.size(), mb.size());
  EXPECT_EQ(ma.size(), 8u);
  for (std::size_t i = 0; i < ma.size(); ++i) EXPECT_TRUE(ma[i].same_result(mb[i]));
  EXPECT_EQ(config_text(load_config(dir / "a" / "config.txt")), config_text(a));
  for (const RunOutcome& run : ra.runs) {
    ASSERT_TRUE(run.linear_probe_acc);
    EXPECT_GE(*run.linear_probe_acc, 0.0);
    EXPECT_LE(*run.knn_acc, 1.0);
  }
}

TEST(Experiment, UnwritableOutputIsAnError) {
  TempDir dir("unwritable");
  std::ofstream(dir / "file") << "x";
  const ExperimentConfig c = parse_config(small_run_config(dir / "file" / "sub"));
  EXPECT_THROW(run_experiment(c), std::exception);
}

TEST(Bench, ReportsEveryMethodWithCounts) {
  BenchOptions o;
  o.problems = 3;
  const auto rows = hypergrad_bench(o);
  EXPECT_EQ(rows.size(), 15u);
  std::ostringstream csv;
  write_bench_csv(csv, rows);
  EXPECT_EQ(csv.str().rfind("problem,dim,method,relative_error,inner_evaluations,outer_evaluations", 0), 0u);
  for (const BenchRow& r : rows) {
    EXPECT_GT(r.inner_evaluations + r.outer_evaluations, 0u) << r.method;
    if (r.method == "aid_cg") EXPECT_LE(r.relative_error, 1e-8);
  }
}

TEST(Cli, UsageErrorsExitTwo) {
  std::string err;
  EXPECT_EQ(run_cli({"frobnicate"}, nullptr, &err), 2);
  EXPECT_NE(err.find("Usage"), std::string::npos);
  EXPECT_EQ(run_cli({"gradcheck", "--bogus"}), 2);
  EXPECT_EQ(run_cli({}), 2);
  EXPECT_EQ(run_cli({"--help"}), 0);
}

TEST(Cli, GradcheckPasses) {
  std::string out;
  EXPECT_EQ(run_cli({"gradcheck", "--points", "10"}, &out), 0);
  EXPECT_NE(out.find("softmax_rows"), std::string::npos);
}

TEST(Cli, GenDataTrainProbeSigma) {
  TempDir dir("cli");
  const std::string data = (dir / "blobs.gsds").string();
  ASSERT_EQ(run_cli({"gen-data", "--classes", "8", "--per-class", "100", "--dim", "16", "--seed", "7", "--output", data}),
            0);
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << small_run_config(dir / "run", "data=raw\ndata_path=" + data + "\n");
  }
  std::string out, err;
  ASSERT_EQ(run_cli({"train", "--config", (dir / "run.cfg").string()}, &out, &err), 0) << err;
  const std::string ckpt = (dir / "run" / "checkpoints" / "gessl-seed3.gssl").string();
  ASSERT_TRUE(std::filesystem::exists(ckpt));
  EXPECT_EQ(run_cli({"probe", "--checkpoint", ckpt, "--data", data, "--epochs", "10"}, &out), 0);
  EXPECT_NE(out.find("linear_probe_acc="), std::string::npos);
  EXPECT_NE(out.find("knn_acc="), std::string::npos);
  const std::string radar = (dir / "radar.csv").string();
  EXPECT_EQ(run_cli({"sigma", "--checkpoint", ckpt, "--checkpoint", ckpt, "--data", data, "--tasks", "2", "--radar", radar}, &out), 0);
  EXPECT_TRUE(std::filesystem::exists(radar));
  EXPECT_EQ(run_cli({"probe", "--checkpoint", ckpt}, nullptr, &err), 2);
}

TEST(Cli, BenchWritesCsv) {
  std::string out;
  EXPECT_EQ(run_cli({"hypergrad-bench", "--problems", "2"}, &out), 0);
  EXPECT_NE(out.find("aid_neumann"), std::string::npos);
}
