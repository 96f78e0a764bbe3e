#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace arterial {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x00000100000001b3ull;
  }
  return h;
}

/// One mt19937_64 engine whose seed is derived from (master seed, stream name).
/// Uniform doubles are built from the top 53 bits so draws do not depend on the
/// standard library's distribution implementations.
class Stream {
 public:
  Stream() = default;
  Stream(std::uint64_t master, std::string_view name) : engine_(splitmix64(master ^ fnv1a64(name))) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t bits() { return engine_(); }

 private:
  std::mt19937_64 engine_{0};
};

/// Named streams, one per concern, so that changing how often one concern
/// draws never shifts another (paired comparisons across lane modes stay aligned).
struct RandomStreams {
  explicit RandomStreams(std::uint64_t seed)
      : arrivals(seed, "arrivals"),
        classes(seed, "class-assignment"),
        params(seed, "driver-params"),
        routes(seed, "routes"),
        entry_lanes(seed, "entry-lanes"),
        tie_breaks(seed, "lane-change-tie-breaks") {}

  Stream arrivals;
  Stream classes;
  Stream params;
  Stream routes;
  Stream entry_lanes;
  Stream tie_breaks;
};

}  // namespace arterial
