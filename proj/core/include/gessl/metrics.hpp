#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace gessl {

/// One line of the metrics stream, emitted per outer step.
struct MetricsRecord {
  std::uint64_t step = 0;
  std::uint64_t episode = 0;
  std::uint64_t seed = 0;
  std::string mode = "gessl";
  double inner_loss_mean = 0.0;
  double distill_loss = 0.0;
  double outer_grad_norm = 0.0;
  std::optional<double> probe_acc;
  std::optional<double> sigma_mean;
  double wall_ms = 0.0;

  /// Equality on every field except wall_ms.
  bool same_result(const MetricsRecord& other) const;
};

/// Serializes one record as a JSON object with a fixed key order and 17
/// significant digits for floating-point fields.
std::string to_json_line(const MetricsRecord& record);
MetricsRecord parse_json_line(const std::string& line);

void emit_metrics(const MetricsRecord& record, std::ostream& sink);

/// Reads a JSONL metrics file; malformed lines raise an error naming the
/// 1-based line number.
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

/// Pivots <run_dir>/metrics.jsonl into <run_dir>/metrics.csv; returns the
/// number of data rows written.
std::size_t export_csv(const std::filesystem::path& run_dir);

/// Formats a double with 17 significant digits.
std::string format_double(double value);

}  // namespace gessl
