#include "rng.hpp"

#include <cmath>
#include <numbers>

#include "errors.hpp"

namespace bilevel {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t Rng::derive_seed(std::uint64_t root, std::string_view stream) {
  std::uint64_t h = kFnvOffset;
  for (unsigned char c : stream) {
    h ^= c;
    h *= kFnvPrime;
  }
  return splitmix64(root ^ splitmix64(h));
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_ = radius * std::sin(angle);
  has_cached_ = true;
  return radius * std::cos(angle);
}

std::int64_t Rng::uniform_index(std::int64_t n) {
  if (n <= 0) fail(ErrorCode::InvalidInput, "uniform_index: n must be positive");
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t draw = next_u64();
  while (draw >= limit) draw = next_u64();
  return static_cast<std::int64_t>(draw % un);
}

std::vector<std::int32_t> Rng::sample_without_replacement(std::int32_t n,
                                                          std::int32_t k) {
  if (k < 0 || k > n)
    fail(ErrorCode::InvalidInput, "sample_without_replacement: need 0 <= k <= n");
  std::vector<std::int32_t> pool(n);
  for (std::int32_t i = 0; i < n; ++i) pool[i] = i;
  for (std::int32_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::int32_t>(uniform_index(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace bilevel
