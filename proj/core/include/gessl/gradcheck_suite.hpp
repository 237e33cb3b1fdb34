#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gessl {

struct OpCheckResult {
  std::string name;  // op name, plus the operand checked for multi-input ops
  std::size_t points = 0;
  double max_error = 0.0;
};

/// Finite-difference check of every tensor op at `points` seeded smooth
/// points each. Multi-input ops are checked once per operand.
std::vector<OpCheckResult> run_gradcheck_suite(std::size_t points = 100, std::uint64_t seed = 0, double h = 1e-5);

}  // namespace gessl
