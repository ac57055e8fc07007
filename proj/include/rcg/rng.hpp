#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace rcg {

/// xoshiro256** seeded through splitmix64. Bit-reproducible across platforms,
/// which std::normal_distribution and friends are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();   // standard normal (Box-Muller, no caching)
  std::size_t below(std::size_t n);  // [0, n)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  /// Independent stream derived from this generator's seed and a tag.
  static Rng derive(std::uint64_t seed, std::uint64_t tag);

 private:
  std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace rcg
