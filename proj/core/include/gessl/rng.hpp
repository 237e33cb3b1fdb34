#pragma once

#include <cstdint>
#include <initializer_list>

namespace gessl {

/// Purposes that partition the key space of derived streams.
enum class StreamPurpose : std::uint64_t {
  init = 1,
  data = 2,
  task = 3,
  head = 4,
  probe = 5,
  eval = 6,
  bench = 7,
};

/// Counter-based random stream: draw i is a pure function of (key, i), so a
/// stream derived from (seed, purpose, episode, task, ...) yields the same
/// values no matter which thread or in which order it is constructed.
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) noexcept : key_(key) {}

  static RngStream derive(std::uint64_t master_seed, StreamPurpose purpose,
                          std::initializer_list<std::uint64_t> ids = {}) noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller; both variates of a pair are used.
  double normal() noexcept;
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace gessl
