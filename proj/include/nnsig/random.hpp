#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace nnsig {

// Substream scheme. Every random quantity in the library is drawn from a
// std::mt19937_64 seeded with
//
//   substream_seed(master, tag, index)
//     = splitmix64(splitmix64(master ^ tag) + splitmix64(index))
//
// where `tag` names the consumer (network sampling, null draws, ...) and
// `index` is the replication or network counter. Work items own their
// stream, so results never depend on how items are spread over threads.
inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

namespace stream_tag {
inline constexpr std::uint64_t kNetworkSampling = 0x6e65747300000001ULL;
inline constexpr std::uint64_t kNullDraws = 0x6e756c6c00000002ULL;
inline constexpr std::uint64_t kRademacher = 0x7261646d00000003ULL;
inline constexpr std::uint64_t kCovariates = 0x636f767200000004ULL;
inline constexpr std::uint64_t kNoise = 0x6e6f697300000005ULL;
inline constexpr std::uint64_t kShuffle = 0x7368756600000006ULL;
inline constexpr std::uint64_t kExperiment = 0x6578707400000007ULL;
inline constexpr std::uint64_t kSplit = 0x73706c7400000008ULL;
inline constexpr std::uint64_t kTrainingInit = 0x696e697400000009ULL;
}  // namespace stream_tag

inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t tag,
                                    std::uint64_t index) noexcept {
  return splitmix64(splitmix64(master ^ tag) + splitmix64(index));
}

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}
  RandomStream(std::uint64_t master, std::uint64_t tag, std::uint64_t index)
      : engine_(substream_seed(master, tag, index)) {}

  double gaussian() { return normal_(engine_); }
  double gaussian(double sigma) { return sigma * normal_(engine_); }

  // N(0, sigma^2) conditioned on |x| <= bound, by rejection.
  double truncated_gaussian(double sigma, double bound) {
    for (;;) {
      const double v = sigma * normal_(engine_);
      if (std::abs(v) <= bound) return v;
    }
  }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  double rademacher() { return (engine_() >> 63) ? 1.0 : -1.0; }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace nnsig
