#pragma once

// Unlabeled data -> N-way mini-batch tasks. Each sampled row becomes a
// pseudo-class whose members are its augmented views.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gessl/rng.hpp"
#include "gessl/tensor.hpp"

namespace gessl {

struct Dataset {
  Tensor features;                            // [n x d]
  std::optional<std::vector<int>> true_labels;  // evaluation only
  std::string name;

  std::size_t rows() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  void validate() const;
};

struct SyntheticSpec {
  std::size_t classes = 8;
  std::size_t per_class = 100;
  std::size_t dim = 16;
  double center_scale = 1.0;
  double within_sigma = 1.5;

  void validate() const;
};

/// Gaussian blobs: centers ~ N(0, center_scale^2 I), samples = center +
/// N(0, within_sigma^2 I). Rows are grouped by class.
Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

struct AugmentationSpec {
  double noise_sigma = 0.1;
  double dropout_p = 0.1;
  double scale_lo = 0.8;
  double scale_hi = 1.2;

  static AugmentationSpec identity() { return {0.0, 0.0, 1.0, 1.0}; }
  void validate() const;
};

/// out = (row * dropout_mask) * scale + noise; draws scale first, then a
/// (mask, noise) pair per coordinate.
std::vector<double> augment(std::span<const double> row, const AugmentationSpec& spec, RngStream& rng);

struct TaskBatch {
  Tensor views;                  // [(N*A) x d]
  std::vector<int> pseudo_labels;  // N*A ids, view i*A+a has label i
  std::size_t N = 0;
  std::size_t A = 0;
  std::vector<std::size_t> source_indices;
  std::uint64_t key = 0;  // stream key; seeds per-task heads

  std::size_t samples() const { return N * A; }
};

TaskBatch make_task(const Dataset& dataset, std::size_t N, std::size_t A, const AugmentationSpec& aug,
                    RngStream& rng);

/// The stream for task `task` of episode `episode`.
RngStream task_stream(std::uint64_t master_seed, std::uint64_t episode, std::uint64_t task);

std::vector<TaskBatch> make_episode(const Dataset& dataset, std::size_t M, std::size_t N, std::size_t A,
                                    const AugmentationSpec& aug, std::uint64_t master_seed,
                                    std::uint64_t episode);

/// Checks the label-multiset and distinct-source invariants; throws on failure.
void validate_task(const TaskBatch& task);

// ---- file formats ----

enum class DatasetErrorCode { bad_magic, bad_version, truncated, dim_mismatch, io };

class DatasetFormatError : public std::runtime_error {
 public:
  DatasetFormatError(DatasetErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  DatasetErrorCode code() const noexcept { return code_; }

 private:
  DatasetErrorCode code_;
};

/// Little-endian "GSDS" v1: n u64, d u64, has_labels u8, n*d float32, n int32.
void save_raw_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_raw_dataset(const std::filesystem::path& path, std::optional<std::size_t> expected_dim = std::nullopt);

/// Standard CIFAR-10 binary batch: 1 label byte + 3072 pixel bytes per record,
/// rescaled to [0, 1]. `limit` keeps the first records only.
Dataset load_cifar10_batch(const std::filesystem::path& path, std::optional<std::size_t> limit = std::nullopt);

}  // namespace gessl
