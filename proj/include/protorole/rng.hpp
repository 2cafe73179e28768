#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace protorole {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent child seeds so that
/// parallel and serial runs draw identical streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// The helpers below avoid std:: distributions, whose output is
// implementation-defined, so that seeded outputs are portable.

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = Rng::max() - Rng::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

inline std::size_t sample_categorical(Rng& rng, std::span<const double> probs) {
  double total = 0.0;
  for (double p : probs) total += p;
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (u < probs[i]) return i;
    u -= probs[i];
  }
  // Rounding can leave u marginally above the last cell.
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return i;
  throw std::invalid_argument("sample_categorical: all-zero weights");
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

/// Dirichlet(1, ..., 1) draw via normalized unit exponentials.
inline std::vector<double> flat_dirichlet(Rng& rng, std::size_t k) {
  std::vector<double> out(k);
  double total = 0.0;
  for (auto& x : out) {
    x = -std::log1p(-uniform01(rng));
    total += x;
  }
  for (auto& x : out) x /= total;
  return out;
}

template <class T>
void shuffle(Rng& rng, std::vector<T>& xs) {
  for (std::size_t i = xs.size(); i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(xs[i - 1], xs[j]);
  }
}

}  // namespace protorole
