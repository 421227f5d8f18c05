#pragma once

#include <cstdint>
#include <random>

namespace tvroa {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Independent, reproducible stream for (seed, stream, index). Every random
/// consumer in the pipeline draws from its own stream so that stages and
/// individual simulations can be replayed in isolation.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream,
                       std::uint64_t index = 0) {
  const std::uint64_t a = mix64(seed ^ mix64(stream + 0x632be59bd9b4e019ULL));
  return Rng(mix64(a ^ mix64(index + 0x8cb92ba72f3d8dd7ULL)));
}

// Stream identifiers.
enum class Stream : std::uint64_t {
  kEstimation = 1,
  kVerification = 2,
  kOutletCheck = 3,
  kTesting = 99,
};

inline Rng make_stream(std::uint64_t seed, Stream stream,
                       std::uint64_t index = 0) {
  return make_stream(seed, static_cast<std::uint64_t>(stream), index);
}

}  // namespace tvroa
