#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace secmlops {

std::uint64_t splitmix64(std::uint64_t& state);

// xoshiro256** seeded through splitmix64. Every random draw in the library
// goes through this type so results are reproducible across platforms
// (std:: distributions are implementation-defined).
//
// Stream splitting: Rng(seed, stream) seeds splitmix64 with
//   seed ^ (0x9E3779B97F4A7C15 * (stream + 1))
// and draws the four state words from it. Scene i of a dataset uses
// stream i; subsystems use the fixed stream tags in `streams`.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next();
  // [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n); n > 0. Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);
  // Inclusive range.
  std::int64_t integer(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);
  // Box-Muller, one value per call (the pair's second value is discarded).
  double normal(double mean = 0.0, double stddev = 1.0);
  // Marsaglia-Tsang.
  double gamma(double shape);
  double beta(double a, double b);

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }
  template <typename T>
  void shuffle(std::vector<T>& values) {
    shuffle(std::span<T>(values));
  }

 private:
  std::uint64_t s_[4];
};

namespace streams {
inline constexpr std::uint64_t kSplit = 0xA11CE;
inline constexpr std::uint64_t kInit = 0x1417;
inline constexpr std::uint64_t kShuffle = 0x5A0FF1E;
inline constexpr std::uint64_t kCutMix = 0xC07319;
inline constexpr std::uint64_t kPoison = 0x9015;
inline constexpr std::uint64_t kAttack = 0xA77AC;
inline constexpr std::uint64_t kMonitor = 0x3017;
}  // namespace streams

}  // namespace secmlops
