#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

namespace tango {

// SplitMix64 stream keyed by (seed, label). Bit-for-bit identical on every
// platform, unlike the standard library distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::string_view key = {});

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Box-Muller standard normal.
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t state_;
  std::optional<double> spare_;
};

}  // namespace tango
