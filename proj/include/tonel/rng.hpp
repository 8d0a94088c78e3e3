#pragma once

#include <array>
#include <cstdint>

namespace tonel {

// Philox4x32-10 keyed counter-based generator (Salmon et al., SC'11 "Parallel
// random numbers: as easy as 1, 2, 3"). Every output block is a pure function
// of (key, counter), so draws are reproducible regardless of thread schedule.
struct Philox4x32 {
  static std::array<uint32_t, 4> block(const std::array<uint32_t, 4>& counter,
                                       const std::array<uint32_t, 2>& key);
};

// Substream contexts. Streams with distinct (context, a, b) triples never
// overlap; the triple is baked into the Philox counter words.
enum class RngContext : uint32_t {
  kModelInit = 1,
  kShuffle = 2,
  kTrainNoise = 3,
  kEvalNoise = 4,
  kNoisySelect = 5,
  kKmeans = 6,
  kSynthetic = 7,
  kSplit = 8,
  kRandomRanker = 9,
};

// One logical stream of the project RNG. Layout: Philox key = seed, counter
// = (block, a, b, context). Capacity is 2^32 blocks (~1.7e10 u32 draws) per
// stream, far beyond anything drawn here.
class RngStream {
 public:
  RngStream(uint64_t seed, RngContext ctx, uint32_t a = 0, uint32_t b = 0);

  uint32_t next_u32();
  uint64_t next_u64();

  // Uniform in [0, 1) with 53-bit resolution.
  double next_double();

  // Unbiased uniform integer in [0, n); n > 0. Rejection-sampled.
  uint32_t next_below(uint32_t n);

  // Standard normal via Box-Muller; the second draw of each pair is cached.
  double next_gaussian();

 private:
  void refill();

  std::array<uint32_t, 2> key_;
  std::array<uint32_t, 3> stream_;  // (a, b, ctx)
  uint32_t block_ = 0;
  std::array<uint32_t, 4> buf_{};
  int pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace tonel
