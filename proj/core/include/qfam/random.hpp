#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace qfam {

// Source of random bytes for identifiers, TINs, keys and puzzle start points.
// Implementations are not thread-safe; give each actor its own instance.
class RandomSource {
 public:
  virtual ~RandomSource() = default;

  virtual void fill(std::span<std::uint8_t> out) = 0;

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in [0, bound); bound must be non-zero.
  std::uint64_t below(std::uint64_t bound);
};

/// OpenSSL's CSPRNG.
class SystemRandom final : public RandomSource {
 public:
  void fill(std::span<std::uint8_t> out) override;
};

// SHA-256 in counter mode over a 64-bit seed. Reproducible streams for
// simulations and tests; never used where an adversary could learn the seed.
class DeterministicRandom final : public RandomSource {
 public:
  explicit DeterministicRandom(std::uint64_t seed, std::uint64_t stream = 0);

  void fill(std::span<std::uint8_t> out) override;

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint8_t, 32> block_{};
  std::size_t used_ = 32;
};

}  // namespace qfam
