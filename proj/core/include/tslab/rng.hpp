#pragma once

#include <cstdint>
#include <string_view>

namespace tslab {

/// Deterministic, platform-independent random stream.
///
/// Algorithm (fixed): the 64-bit seed is expanded through splitmix64 into
/// the four words of a xoshiro256++ state; uniforms take the top 53 bits,
/// gaussians use Box-Muller. Identical seeds give identical streams on any
/// platform. Child streams are derived from the *original* seed plus a tag
/// (FNV-1a), so derivation order never affects the result.
class RngState {
 public:
  explicit RngState(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  double next_uniform();                       // [0, 1)
  double next_uniform(double lo, double hi);   // [lo, hi)
  double next_gaussian();                      // mean 0, std 1
  std::int64_t next_index(std::int64_t n);     // uniform in [0, n)

  RngState derive(std::string_view tag) const;
  RngState derive(std::uint64_t salt) const;

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool have_cached_gaussian_ = false;
  double cached_gaussian_ = 0.0;
};

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace tslab
