#pragma once

#include <cstdint>
#include <limits>

namespace mlsim {

/// Independent purposes an entity draws randomness for. Each gets its own
/// substream so draw counts in one never shift another.
enum class StreamTag : std::uint64_t {
  Placement = 1,
  Mobility = 2,
  Generation = 3,
  Gossip = 4,
};

/// Small-state splitmix64 generator. Entities carry several of these, so the
/// 2.5 KB state of std::mt19937_64 is not an option at 32000 entities.
/// Satisfies UniformRandomBitGenerator, so it plugs into <random> distributions.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  RandomStream() = default;
  explicit RandomStream(std::uint64_t seed) : state_(seed) {}

  /// Substream for (global seed, entity id, tag). Inputs are hashed before
  /// combining so distinct triples never collide the way a bare xor would.
  static RandomStream for_entity(std::uint64_t seed, std::uint64_t entity, StreamTag tag) {
    return RandomStream(mix(seed ^ mix(entity + 0x632be59bd9b4e019ULL) ^
                            mix(static_cast<std::uint64_t>(tag) << 56)));
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  friend bool operator==(const RandomStream&, const RandomStream&) = default;

 private:
  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_ = 0;
};

}  // namespace mlsim
