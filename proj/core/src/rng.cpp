#include "tslab/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tslab {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}
}  // namespace

RngState::RngState(std::uint64_t seed) : seed_(seed) {
  std::uint64_t sm = seed;
  for (auto& w : s_) w = splitmix64(sm);
}

std::uint64_t RngState::next_u64() {
  // xoshiro256++
  const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double RngState::next_uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngState::next_uniform(double lo, double hi) {
  return lo + (hi - lo) * next_uniform();
}

double RngState::next_gaussian() {
  if (have_cached_gaussian_) {
    have_cached_gaussian_ = false;
    return cached_gaussian_;
  }
  // Box-Muller; u1 in (0,1] so the log is finite
  const double u1 = 1.0 - next_uniform();
  const double u2 = next_uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  cached_gaussian_ = r * std::sin(a);
  have_cached_gaussian_ = true;
  return r * std::cos(a);
}

std::int64_t RngState::next_index(std::int64_t n) {
  if (n <= 0) throw std::invalid_argument("next_index: n must be positive");
  // Lemire's multiply-shift with rejection: unbiased and deterministic.
  const std::uint64_t range = static_cast<std::uint64_t>(n);
  const std::uint64_t threshold = (0 - range) % range;
  while (true) {
    const std::uint64_t x = next_u64();
    const unsigned __int128 m =
        static_cast<unsigned __int128>(x) * static_cast<unsigned __int128>(range);
    if (static_cast<std::uint64_t>(m) >= threshold)
      return static_cast<std::int64_t>(m >> 64);
  }
}

RngState RngState::derive(std::string_view tag) const {
  return derive(fnv1a64(tag));
}

RngState RngState::derive(std::uint64_t salt) const {
  std::uint64_t s = seed_ ^ (salt + 0x9e3779b97f4a7c15ull);
  return RngState(splitmix64(s));
}

}  // namespace tslab
