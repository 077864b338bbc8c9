#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace dreamrace {

// splitmix64; used for seeding and deriving substreams
inline std::uint64_t splitmix64(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// xoshiro256++ with explicit, serializable state. Deterministic across
// platforms, unlike the distributions in <random>.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
    has_spare_ = false;
    spare_ = 0.0;
  }

  // derive an independent substream (seed mixed with the stream id)
  Rng fork(std::uint64_t stream) {
    std::uint64_t mix = next_u64() ^ (0x9e3779b97f4a7c15ull * (stream + 1));
    return Rng(mix);
  }

  std::uint64_t next_u64() {
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

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller, one value cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  int uniform_int(int n) { return int(next_u64() % std::uint64_t(n)); }

  // index sampled from unnormalized non-negative weights
  template <typename T>
  int categorical(const T* w, int n) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += double(w[i]);
    double u = uniform() * total;
    for (int i = 0; i < n; ++i) {
      u -= double(w[i]);
      if (u < 0.0) return i;
    }
    return n - 1;
  }

  // state access for checkpointing
  std::array<std::uint64_t, 6> save() const {
    return {s_[0], s_[1], s_[2], s_[3], std::uint64_t(has_spare_),
            bit_cast_u64(spare_)};
  }
  void restore(const std::array<std::uint64_t, 6>& st) {
    for (int i = 0; i < 4; ++i) s_[i] = st[i];
    has_spare_ = st[4] != 0;
    spare_ = bit_cast_double(st[5]);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  static std::uint64_t bit_cast_u64(double d) {
    std::uint64_t u;
    __builtin_memcpy(&u, &d, 8);
    return u;
  }
  static double bit_cast_double(std::uint64_t u) {
    double d;
    __builtin_memcpy(&d, &u, 8);
    return d;
  }

  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dreamrace
