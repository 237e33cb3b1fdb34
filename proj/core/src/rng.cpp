#include "gessl/rng.hpp"

#include <cmath>
#include <numbers>

namespace gessl {

std::uint64_t mix64(std::uint64_t x) noexcept {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream RngStream::derive(std::uint64_t master_seed, StreamPurpose purpose,
                            std::initializer_list<std::uint64_t> ids) noexcept {
  std::uint64_t key = mix64(master_seed);
  key = mix64(key ^ static_cast<std::uint64_t>(purpose));
  for (std::uint64_t id : ids) key = mix64(key ^ mix64(id + 0x632be59bd9b4e019ULL));
  return RngStream(key);
}

std::uint64_t RngStream::next_u64() noexcept {
  const std::uint64_t i = counter_++;
  return mix64(key_ ^ mix64(i));
}

double RngStream::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t RngStream::below(std::uint64_t n) noexcept {
  if (n <= 1) return 0;
  const std::uint64_t threshold = (0 - n) % n;
  std::uint64_t x = next_u64();
  while (x < threshold) x = next_u64();
  return x % n;
}

}  // namespace gessl
