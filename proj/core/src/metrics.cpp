#include "gessl/metrics.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace gessl {

namespace {

std::string optional_field(const std::optional<double>& v) { return v ? format_double(*v) : "null"; }

std::optional<double> read_optional(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

double read_double(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  return v.is_null() ? std::nan("") : v.get<double>();
}

}  // namespace

bool MetricsRecord::same_result(const MetricsRecord& other) const {
  return step == other.step && episode == other.episode && seed == other.seed && mode == other.mode &&
         inner_loss_mean == other.inner_loss_mean && distill_loss == other.distill_loss &&
         outer_grad_norm == other.outer_grad_norm && probe_acc == other.probe_acc && sigma_mean == other.sigma_mean;
}

std::string format_double(double value) {
  if (std::isnan(value) || std::isinf(value)) return "null";
  return fmt::format("{:.17g}", value);
}

std::string to_json_line(const MetricsRecord& r) {
  return fmt::format(
      "{{\"step\":{},\"episode\":{},\"seed\":{},\"mode\":{},\"inner_loss_mean\":{},\"distill_loss\":{},"
      "\"outer_grad_norm\":{},\"probe_acc\":{},\"sigma_mean\":{},\"wall_ms\":{}}}",
      r.step, r.episode, r.seed, nlohmann::json(r.mode).dump(), format_double(r.inner_loss_mean),
      format_double(r.distill_loss), format_double(r.outer_grad_norm), optional_field(r.probe_acc),
      optional_field(r.sigma_mean), format_double(r.wall_ms));
}

MetricsRecord parse_json_line(const std::string& line) {
  const nlohmann::json j = nlohmann::json::parse(line);
  if (!j.is_object()) throw std::invalid_argument("metrics line is not an object");
  MetricsRecord r;
  r.step = j.at("step").get<std::uint64_t>();
  r.episode = j.at("episode").get<std::uint64_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.mode = j.at("mode").get<std::string>();
  r.inner_loss_mean = read_double(j, "inner_loss_mean");
  r.distill_loss = read_double(j, "distill_loss");
  r.outer_grad_norm = read_double(j, "outer_grad_norm");
  r.probe_acc = read_optional(j, "probe_acc");
  r.sigma_mean = read_optional(j, "sigma_mean");
  r.wall_ms = read_double(j, "wall_ms");
  return r;
}

void emit_metrics(const MetricsRecord& record, std::ostream& sink) {
  sink << to_json_line(record) << '\n';
  sink.flush();
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<MetricsRecord> records;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      records.push_back(parse_json_line(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(fmt::format("{}:{}: malformed metrics line: {}", path.string(), number, e.what()));
    }
  }
  return records;
}

std::size_t export_csv(const std::filesystem::path& run_dir) {
  const auto records = read_metrics(run_dir / "metrics.jsonl");
  std::ofstream out(run_dir / "metrics.csv");
  if (!out) throw std::runtime_error("cannot write " + (run_dir / "metrics.csv").string());
  out << "mode,seed,step,episode,inner_loss_mean,distill_loss,outer_grad_norm,probe_acc,sigma_mean,wall_ms\n";
  for (const MetricsRecord& r : records) {
    out << r.mode << ',' << r.seed << ',' << r.step << ',' << r.episode << ',' << format_double(r.inner_loss_mean)
        << ',' << format_double(r.distill_loss) << ',' << format_double(r.outer_grad_norm) << ','
        << (r.probe_acc ? format_double(*r.probe_acc) : "") << ',' << (r.sigma_mean ? format_double(*r.sigma_mean) : "")
        << ',' << format_double(r.wall_ms) << '\n';
  }
  return records.size();
}

}  // namespace gessl
