#include <limits>

#include "binary_io.hpp"
#include "gessl/taskgen.hpp"

namespace gessl {

namespace {

constexpr std::string_view kDatasetMagic = "GSDS";
constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::size_t kCifarRecord = 1 + 3072;

}  // namespace

void save_raw_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  detail::ByteWriter w;
  w.put_bytes(kDatasetMagic);
  w.put(kDatasetVersion);
  w.put(static_cast<std::uint64_t>(dataset.rows()));
  w.put(static_cast<std::uint64_t>(dataset.dim()));
  w.put(static_cast<std::uint8_t>(dataset.true_labels ? 1 : 0));
  for (double v : dataset.features.values()) w.put(static_cast<float>(v));
  if (dataset.true_labels) {
    for (int label : *dataset.true_labels) w.put(static_cast<std::int32_t>(label));
  }
  if (!detail::write_file(path, w.bytes())) {
    throw DatasetFormatError(DatasetErrorCode::io, "cannot write dataset file " + path.string());
  }
}

Dataset load_raw_dataset(const std::filesystem::path& path, std::optional<std::size_t> expected_dim) {
  bool ok = false;
  detail::ByteReader r(detail::read_file(path, ok));
  if (!ok) throw DatasetFormatError(DatasetErrorCode::io, "cannot open dataset file " + path.string());

  if (!r.has(4) || r.get_string(4) != kDatasetMagic) {
    throw DatasetFormatError(DatasetErrorCode::bad_magic, path.string() + ": not a GSDS dataset (bad magic)");
  }
  if (!r.has(4 + 8 + 8 + 1)) throw DatasetFormatError(DatasetErrorCode::truncated, path.string() + ": truncated header");
  const auto version = r.get<std::uint32_t>();
  if (version != kDatasetVersion) {
    throw DatasetFormatError(DatasetErrorCode::bad_version,
                             path.string() + ": unsupported dataset version " + std::to_string(version));
  }
  const auto n = r.get<std::uint64_t>();
  const auto d = r.get<std::uint64_t>();
  const bool has_labels = r.get<std::uint8_t>() != 0;
  if (n == 0 || d == 0 || n > std::numeric_limits<std::uint32_t>::max() || d > std::numeric_limits<std::uint32_t>::max()) {
    throw DatasetFormatError(DatasetErrorCode::dim_mismatch,
                             path.string() + ": invalid dimensions n=" + std::to_string(n) + " d=" + std::to_string(d));
  }
  if (expected_dim && *expected_dim != d) {
    throw DatasetFormatError(DatasetErrorCode::dim_mismatch, path.string() + ": feature width " + std::to_string(d) +
                                                                 " does not match expected " +
                                                                 std::to_string(*expected_dim));
  }
  const std::size_t payload = n * d * 4 + (has_labels ? n * 4 : 0);
  if (r.remaining() < payload) {
    throw DatasetFormatError(DatasetErrorCode::truncated, path.string() + ": truncated payload (" +
                                                              std::to_string(r.remaining()) + " of " +
                                                              std::to_string(payload) + " bytes)");
  }
  if (r.remaining() > payload) {
    throw DatasetFormatError(DatasetErrorCode::dim_mismatch,
                             path.string() + ": payload longer than declared dimensions");
  }
  std::vector<double> features(n * d);
  for (double& v : features) v = static_cast<double>(r.get<float>());
  Dataset out{Tensor({n, d}, std::move(features)), std::nullopt, path.stem().string()};
  if (has_labels) {
    std::vector<int> labels(n);
    for (int& label : labels) label = r.get<std::int32_t>();
    out.true_labels = std::move(labels);
  }
  return out;
}

Dataset load_cifar10_batch(const std::filesystem::path& path, std::optional<std::size_t> limit) {
  bool ok = false;
  std::vector<char> bytes = detail::read_file(path, ok);
  if (!ok) throw DatasetFormatError(DatasetErrorCode::io, "cannot open CIFAR-10 batch " + path.string());
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    throw DatasetFormatError(DatasetErrorCode::truncated,
                             path.string() + ": size is not a multiple of the 3073-byte CIFAR-10 record");
  }
  std::size_t records = bytes.size() / kCifarRecord;
  if (limit) records = std::min(records, *limit);
  std::vector<double> features(records * 3072);
  std::vector<int> labels(records);
  for (std::size_t i = 0; i < records; ++i) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data() + i * kCifarRecord);
    labels[i] = rec[0];
    if (labels[i] > 9) throw DatasetFormatError(DatasetErrorCode::dim_mismatch, path.string() + ": label byte > 9");
    for (std::size_t j = 0; j < 3072; ++j) features[i * 3072 + j] = rec[1 + j] / 255.0;
  }
  return Dataset{Tensor({records, 3072}, std::move(features)), std::move(labels), "cifar10"};
}

}  // namespace gessl
