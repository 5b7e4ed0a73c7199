#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>

#include "qfam/bytes.hpp"
#include "qfam/error.hpp"
#include "qfam/token.hpp"

namespace qfam {

// Hash puzzle bound to a Retry token.
//
// Digest input (31 bytes):
//   icv(16) || tin(8, BE) || port(2, BE) || cci(1) || r(4, BE, top 4 bits zero)
//
// An answer r is valid when SHA-256 of that input has at least `cci` leading
// zero bits. Finding one takes 2^cci digests on average; checking one takes a
// single digest.

enum class ChallengeErrc { kExhausted, kCancelled };
using ChallengeError = CodedError<ChallengeErrc>;

struct ChallengeInstance {
  Icv icv{};
  std::uint64_t tin = 0;
  std::uint16_t port = 0;  // client UDP source port
  Cci cci;

  friend bool operator==(const ChallengeInstance&,
                         const ChallengeInstance&) = default;
};

struct ChallengeSolution {
  Mrn mrn;
  std::uint64_t iterations = 0;
  std::chrono::nanoseconds wall_time{0};
};

using Digest = std::array<std::uint8_t, 32>;
inline constexpr std::size_t kChallengeInputSize = 31;

std::array<std::uint8_t, kChallengeInputSize> challenge_input(
    const ChallengeInstance& instance, Mrn r);

Digest challenge_digest(const ChallengeInstance& instance, Mrn r);

/// Zero bits before the first set bit, counting from the MSB of byte 0.
unsigned leading_zero_bits(const Digest& digest);

struct SolveOptions {
  /// Candidates to try before giving up; the full 28-bit space by default.
  std::uint64_t max_candidates = Mrn::kCardinality;
  /// Polled every 2^16 candidates.
  const std::atomic<bool>* cancel = nullptr;
};

/// Searches upward from `start` (wrapping mod 2^28) for the first valid r.
/// iterations = steps + 1. Errors: kExhausted, kCancelled.
ChallengeSolution solve(const ChallengeInstance& instance, Mrn start,
                        const SolveOptions& options = {});

/// One digest evaluation regardless of cci.
bool verify(const ChallengeInstance& instance, Mrn mrn);

/// Digest evaluations performed by this thread so far.
std::uint64_t digest_evaluations();

/// Puzzle parameters carried by a token, bound to the client's source port.
ChallengeInstance instance_for(const RetryToken& token, std::uint16_t port);

}  // namespace qfam
