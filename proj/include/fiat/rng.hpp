#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace fiat {

/// Seeded RNG with fully pinned distributions (mt19937_64 + explicit Box-Muller),
/// so checkpoints and synthetic corpora are bit-identical across platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  double gaussian(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + spare_ * stddev;
    }
    double u = 1.0 - uniform();  // avoid log(0)
    double v = uniform();
    double radius = std::sqrt(-2.0 * std::log(u));
    double angle = 2.0 * M_PI * v;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return mean + radius * std::cos(angle) * stddev;
  }

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (size_t i = values.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// FNV-1a over bytes; used to derive per-example sub-seeds deterministically.
inline uint64_t fnv1a(const std::string& text, uint64_t seed = 1469598103934665603ULL) {
  uint64_t h = seed;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace fiat
