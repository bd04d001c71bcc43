#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace bilevel {

// Seeded random stream with explicit sampling algorithms so that draws are
// bit-stable given (seed, call sequence). Engine is std::mt19937_64 (fully
// specified by the standard); uniforms use the top-53-bit mapping and normals
// use Box-Muller. Algorithm tag: "mt19937_64/box-muller-v1".
//
// Substreams are derived by hashing (root seed, stream name); consuming one
// stream never perturbs another.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "mt19937_64/box-muller-v1";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);
  static Rng substream(std::uint64_t root, std::string_view stream) {
    return Rng(derive_seed(root, stream));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal();

  // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::int64_t uniform_index(std::int64_t n);

  // k distinct indices from [0, n), partial Fisher-Yates order.
  std::vector<std::int32_t> sample_without_replacement(std::int32_t n,
                                                       std::int32_t k);

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace bilevel
