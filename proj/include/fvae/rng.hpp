#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace fvae {

// 64-bit FNV-1a; derives RNG stream ids from purpose names.
inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// PCG XSL-RR 128/64. One instance per named purpose. The full state is
// serializable so a resumed run replays the exact same draws.
class Pcg64 {
 public:
  Pcg64() : Pcg64(0, 0) {}

  Pcg64(uint64_t seed, uint64_t stream) {
    inc_ = (static_cast<u128>(stream) << 1u) | 1u;
    state_ = 0u;
    next_u64();
    state_ += seed;
    next_u64();
  }

  uint64_t next_u64() {
    state_ = state_ * kMul + inc_;
    const uint64_t xored =
        static_cast<uint64_t>(state_ >> 64) ^ static_cast<uint64_t>(state_);
    const unsigned rot = static_cast<unsigned>(state_ >> 122);
    return (xored >> rot) | (xored << ((64u - rot) & 63u));
  }

  // Uniform in [0,1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo,hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Unbiased integer in [0,bound) via rejection.
  uint64_t next_below(uint64_t bound) {
    const uint64_t threshold = (0u - bound) % bound;
    for (;;) {
      const uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  // Standard normal via Box-Muller; consumes exactly two uniforms per draw,
  // so the consumption pattern is state-only (no cached spare).
  double next_normal() {
    const double u1 =
        static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0,1]
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  std::array<uint64_t, 4> save_state() const {
    return {static_cast<uint64_t>(state_ >> 64), static_cast<uint64_t>(state_),
            static_cast<uint64_t>(inc_ >> 64), static_cast<uint64_t>(inc_)};
  }

  void restore_state(const std::array<uint64_t, 4>& w) {
    state_ = (static_cast<u128>(w[0]) << 64) | w[1];
    inc_ = (static_cast<u128>(w[2]) << 64) | w[3];
  }

 private:
  using u128 = unsigned __int128;
  static constexpr u128 kMul =
      (static_cast<u128>(2549297995355413924ull) << 64) |
      4865540595714422341ull;
  static constexpr double kPi = 3.141592653589793238462643383279502884;

  u128 state_{0};
  u128 inc_{1};
};

// Named independent streams sharing one seed: "init", "shuffle", "dropout",
// "eps1", "eps2", ... Streams are created on first use; creation is a pure
// function of (seed, name), so lazily created streams stay reproducible.
class RngBundle {
 public:
  explicit RngBundle(uint64_t seed) : seed_(seed) {}

  Pcg64& stream(const std::string& purpose) {
    auto it = streams_.find(purpose);
    if (it == streams_.end())
      it = streams_.emplace(purpose, Pcg64(seed_, fnv1a64(purpose))).first;
    return it->second;
  }

  uint64_t seed() const { return seed_; }
  const std::map<std::string, Pcg64>& streams() const { return streams_; }

  void restore_stream(const std::string& purpose,
                      const std::array<uint64_t, 4>& words) {
    stream(purpose).restore_state(words);
  }

 private:
  uint64_t seed_;
  std::map<std::string, Pcg64> streams_;
};

inline std::vector<size_t> shuffled_indices(size_t n, Pcg64& rng) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  for (size_t i = n; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.next_below(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

inline std::vector<double> normal_vector(size_t n, Pcg64& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.next_normal();
  return v;
}

}  // namespace fvae
