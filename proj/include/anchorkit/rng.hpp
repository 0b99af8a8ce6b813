#pragma once

// Counter-based pseudo-random number generation.
//
// The generator is Philox4x64-10 (Salmon, Moraes, Dror, Shaw; the Random123
// family): a stateless bijection of a 256-bit counter under a 128-bit key,
// iterated for 10 rounds.  We use key = (seed, stream), so independent
// substreams are obtained by construction rather than by jump-ahead: stream k
// of a given seed never overlaps stream j != k.  Output order, the 53-bit
// uniform convention ((x >> 11) * 2^-53) and the Box-Muller transform below
// are all part of the reproducibility contract: identical (seed, stream)
// sequences are bit-exact across runs and platforms with IEEE-754 doubles.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "types.hpp"

namespace anchorkit {

class Philox {
 public:
  explicit Philox(std::uint64_t seed, std::uint64_t stream = 0)
      : key_{seed, stream} {}

  std::uint64_t seed() const { return key_[0]; }
  std::uint64_t stream() const { return key_[1]; }

  std::uint64_t next_u64() {
    if (pos_ == 4) refill();
    return buf_[pos_++];
  }

  // Uniform on [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1]; safe as a log() argument.
  double next_double_pos() { return 1.0 - next_double(); }

  // Standard normal via Box-Muller; one transform yields two variates, the
  // second is cached, so draws come in deterministic pairs.
  double next_gaussian() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = next_double_pos();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * M_PI * u2;
    cached_ = r * std::sin(t);
    have_cached_ = true;
    return r * std::cos(t);
  }

  Vector gaussian_vector(Index d) {
    Vector v(d);
    for (Index i = 0; i < d; ++i) v[i] = next_gaussian();
    return v;
  }

  // Number of failures before the first success, support {0, 1, 2, ...},
  // mean (1-p)/p.  Inverse-CDF sampling.
  std::uint64_t geometric_failures(double p) {
    if (!(p > 0.0) || p > 1.0)
      throw std::invalid_argument("geometric_failures: p must lie in (0, 1]");
    if (p == 1.0) return 0;
    const double u = next_double();
    const double g = std::floor(std::log1p(-u) / std::log1p(-p));
    return g < 0.0 ? 0 : static_cast<std::uint64_t>(g);
  }

  double lognormal(double loc, double scale) {
    return std::exp(loc + scale * next_gaussian());
  }

 private:
  static void mulhilo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi,
                      std::uint64_t& lo) {
    const unsigned __int128 p =
        static_cast<unsigned __int128>(a) * static_cast<unsigned __int128>(b);
    lo = static_cast<std::uint64_t>(p);
    hi = static_cast<std::uint64_t>(p >> 64);
  }

  static std::array<std::uint64_t, 4> round(
      const std::array<std::uint64_t, 4>& c,
      const std::array<std::uint64_t, 2>& k) {
    constexpr std::uint64_t kM0 = 0xD2E7470EE14C6C93ULL;
    constexpr std::uint64_t kM1 = 0xCA5A826395121157ULL;
    std::uint64_t hi0, lo0, hi1, lo1;
    mulhilo(kM0, c[0], hi0, lo0);
    mulhilo(kM1, c[2], hi1, lo1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }

  void refill() {
    constexpr std::uint64_t kW0 = 0x9E3779B97F4A7C15ULL;
    constexpr std::uint64_t kW1 = 0xBB67AE8584CAA73BULL;
    // The counter advances before encryption (so the first block is produced
    // at counter value 1); this matches the reference implementation's output
    // stream for a generator initialized with counter = 0.
    for (int i = 0; i < 4; ++i) {
      if (++ctr_[i] != 0) break;  // 256-bit counter with carry
    }
    std::array<std::uint64_t, 4> x = ctr_;
    std::array<std::uint64_t, 2> k = key_;
    x = round(x, k);
    for (int r = 1; r < 10; ++r) {
      k[0] += kW0;
      k[1] += kW1;
      x = round(x, k);
    }
    buf_ = x;
    pos_ = 0;
  }

  std::array<std::uint64_t, 2> key_;
  std::array<std::uint64_t, 4> ctr_{0, 0, 0, 0};
  std::array<std::uint64_t, 4> buf_{};
  int pos_ = 4;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace anchorkit
