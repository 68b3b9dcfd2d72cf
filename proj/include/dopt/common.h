// Shared error types, hashing, and seeded random helpers.

#ifndef DOPT_COMMON_H_
#define DOPT_COMMON_H_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dopt {

// Input that violates a documented format or invariant.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or precondition.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Rng = std::mt19937_64;

// 64-bit FNV-1a.
std::uint64_t Fnv1a64(std::string_view data,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

std::uint64_t SplitMix64(std::uint64_t x);

// Seed for an independent stream keyed by (seed, key). Stable across
// platforms and independent of scheduling order.
std::uint64_t StreamSeed(std::uint64_t seed, std::string_view key);
inline Rng StreamRng(std::uint64_t seed, std::string_view key) {
  return Rng(StreamSeed(seed, key));
}

// Uniform integer in [0, n) by rejection sampling; n > 0. Unlike
// std::uniform_int_distribution the result sequence is fixed by the engine.
std::size_t UniformIndex(Rng& rng, std::size_t n);

// Uniform double in [0, 1).
double UniformUnit(Rng& rng);

template <typename T>
void Shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[UniformIndex(rng, i)]);
  }
}

std::string_view Trim(std::string_view s);
// Trims and collapses runs of whitespace to one space.
std::string CollapseWhitespace(std::string_view s);
std::size_t CountWords(std::string_view s);
std::string ToLowerAscii(std::string_view s);

}  // namespace dopt

#endif  // DOPT_COMMON_H_
