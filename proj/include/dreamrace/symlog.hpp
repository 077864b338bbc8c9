#pragma once

#include <cmath>
#include <vector>

namespace dreamrace {

// symmetric log transform: compresses large magnitudes, identity-like near 0
template <typename T>
inline T symlog(T x) {
  return x >= T(0) ? std::log1p(x) : -std::log1p(-x);
}

template <typename T>
inline T symexp(T x) {
  return x >= T(0) ? std::expm1(x) : -std::expm1(-x);
}

// uniform grid in symlog space; decoded bin centers are symexp(b_i)
template <typename T>
struct BinGrid {
  std::vector<T> centers;  // in symlog space

  BinGrid() = default;
  BinGrid(int count, T lo, T hi) {
    centers.resize(count);
    for (int i = 0; i < count; ++i)
      centers[i] = lo + (hi - lo) * T(i) / T(count - 1);
  }

  int size() const { return int(centers.size()); }

  // mass interpolated onto the two bins adjacent to symlog(value);
  // out must hold size() entries and is overwritten
  void twohot(T value, T* out) const {
    const int n = size();
    for (int i = 0; i < n; ++i) out[i] = T(0);
    twohot_encode(symlog(value), centers.data(), n, out);
  }

  // scalar readout: expectation taken in symlog space, then decoded;
  // exact inverse of twohot for in-range values
  T expectation(const T* p) const {
    T acc = T(0);
    for (int i = 0; i < size(); ++i) acc += p[i] * centers[i];
    return symexp(acc);
  }

  // interpolation weights on an arbitrary monotone grid (bins in the same
  // space as s); exposed separately so it can be tested on explicit grids
  static void twohot_encode(T s, const T* bins, int n, T* out) {
    if (s <= bins[0]) {
      out[0] += T(1);
      return;
    }
    if (s >= bins[n - 1]) {
      out[n - 1] += T(1);
      return;
    }
    int hi = 1;
    while (bins[hi] < s) ++hi;
    const int lo = hi - 1;
    const T w_hi = (s - bins[lo]) / (bins[hi] - bins[lo]);
    out[lo] += T(1) - w_hi;
    out[hi] += w_hi;
  }
};

}  // namespace dreamrace
