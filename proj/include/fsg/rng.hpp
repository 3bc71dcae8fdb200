#pragma once

#include <cstdint>
#include <random>

namespace fsg {

/// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);

/// Seed of stream `index` under a base seed. Streams are independent of the
/// order in which they are consumed, so work can be split across threads
/// without changing results.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index);

/// Domain tags keep streams used by different stages apart under one seed.
enum class StreamTag : std::uint64_t {
  corpus_walk = 0x57414c4bULL,
  corpus_start = 0x53545254ULL,
  generation = 0x47454e52ULL,
  generation_start = 0x47535452ULL,
  split = 0x53504c54ULL,
  training = 0x5452414eULL,
  assembly = 0x41534d42ULL,
  model_init = 0x494e4954ULL,
};

std::uint64_t tagged_seed(std::uint64_t seed, StreamTag tag);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller (no cached second value, so the number
  /// of draws per call is fixed).
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace fsg
