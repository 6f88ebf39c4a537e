#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace cgfm {

/// splitmix64 finalizer; the mixing core of the stream-splitting scheme.
inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// @brief Derives a child seed from a root seed and a purpose tag.
///
/// All randomness in a run flows from one 64-bit seed. Module-level streams are
/// derived, never passed as separate flags:
///
///   child = splitmix64(root ^ fnv1a64(tag))
///   child = splitmix64(child ^ splitmix64(index + 1))   (per-item variant)
///
/// Tags in use: "net.init", "train.loop", "train.val", "forecast", "synth".
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) {
  return splitmix64(root ^ fnv1a64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t index) {
  return splitmix64(derive_seed(root, tag) ^ splitmix64(index + 1));
}

/// @brief Seeded random stream: a thin wrapper over std::mt19937_64.
///
/// One stream per purpose; callers that parallelize must give each worker its
/// own derived stream rather than sharing one.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform01() { return uniform_(engine_); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
    return d(engine_);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace cgfm
