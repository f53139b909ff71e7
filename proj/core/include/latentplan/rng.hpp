#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace latentplan {

uint64_t fnv1a(std::string_view s);

// Deterministic xoshiro256++ generator seeded through splitmix64.
// Named substreams let independent components draw from one master seed
// without coupling their sequences. Results are identical across
// platforms; nothing here depends on std:: distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed);
  Rng(uint64_t master_seed, std::string_view stream);

  uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n); n must be > 0.
  int uniform_int(int n);
  // Standard normal via Box-Muller; pairs are cached.
  double normal();
  double normal(double mean, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Full generator state, for checkpoints: 4 state words, the cached
  // normal flag and its bit pattern.
  std::array<uint64_t, 6> save_state() const;
  void restore_state(const std::array<uint64_t, 6>& state);

 private:
  std::array<uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace latentplan
