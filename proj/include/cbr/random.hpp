#pragma once

#include <cstdint>
#include <random>

namespace cbr {

using Engine = std::mt19937_64;

// Engine for substream `stream` of `seed`. Distinct (seed, stream) pairs give
// statistically independent sequences; identical pairs give identical ones.
inline Engine make_engine(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
  return Engine(seq);
}

// Unit-mean exponential power gain (Rayleigh amplitude).
inline double draw_fading(Engine& eng) {
  return std::exponential_distribution<double>(1.0)(eng);
}

inline bool draw_bernoulli(Engine& eng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(eng) < p;
}

}  // namespace cbr
