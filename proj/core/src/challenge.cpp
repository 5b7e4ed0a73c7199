#include "qfam/challenge.hpp"

#include <bit>

#include "qfam/work.hpp"
#include "sha256.hpp"

namespace qfam {

namespace {

detail::Sha256& hasher() {
  thread_local detail::Sha256 sha;
  return sha;
}

void set_r(std::array<std::uint8_t, kChallengeInputSize>& in, std::uint32_t r) {
  in[27] = static_cast<std::uint8_t>(r >> 24);
  in[28] = static_cast<std::uint8_t>(r >> 16);
  in[29] = static_cast<std::uint8_t>(r >> 8);
  in[30] = static_cast<std::uint8_t>(r);
}

Digest digest_of(const std::array<std::uint8_t, kChallengeInputSize>& in) {
  ++detail::mutable_thread_work().digests;
  return hasher()(in);
}

}  // namespace

std::array<std::uint8_t, kChallengeInputSize> challenge_input(
    const ChallengeInstance& instance, Mrn r) {
  std::array<std::uint8_t, kChallengeInputSize> in{};
  std::copy(instance.icv.begin(), instance.icv.end(), in.begin());
  for (int i = 0; i < 8; ++i) {
    in[16 + i] = static_cast<std::uint8_t>(instance.tin >> (56 - 8 * i));
  }
  in[24] = static_cast<std::uint8_t>(instance.port >> 8);
  in[25] = static_cast<std::uint8_t>(instance.port);
  in[26] = instance.cci.value();
  set_r(in, r.value());
  return in;
}

Digest challenge_digest(const ChallengeInstance& instance, Mrn r) {
  return digest_of(challenge_input(instance, r));
}

unsigned leading_zero_bits(const Digest& digest) {
  unsigned n = 0;
  for (std::uint8_t b : digest) {
    if (b != 0) return n + static_cast<unsigned>(std::countl_zero(b));
    n += 8;
  }
  return n;
}

ChallengeSolution solve(const ChallengeInstance& instance, Mrn start,
                        const SolveOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const unsigned need = instance.cci.value();
  auto in = challenge_input(instance, start);
  std::uint32_t r = start.value();

  for (std::uint64_t step = 0; step < options.max_candidates; ++step) {
    if (options.cancel != nullptr && (step & 0xffff) == 0xffff &&
        options.cancel->load(std::memory_order_relaxed)) {
      throw ChallengeError(ChallengeErrc::kCancelled, "challenge solve cancelled");
    }
    if (leading_zero_bits(digest_of(in)) >= need) {
      return {Mrn(r), step + 1, std::chrono::steady_clock::now() - t0};
    }
    r = (r + 1) & Mrn::kMax;
    set_r(in, r);
  }
  throw ChallengeError(ChallengeErrc::kExhausted,
                       "no matching random number in search range");
}

bool verify(const ChallengeInstance& instance, Mrn mrn) {
  return leading_zero_bits(challenge_digest(instance, mrn)) >=
         instance.cci.value();
}

std::uint64_t digest_evaluations() { return thread_work().digests; }

ChallengeInstance instance_for(const RetryToken& token, std::uint16_t port) {
  ChallengeInstance inst;
  inst.icv = token.icv;
  inst.tin = token.header.tin;
  inst.port = port;
  inst.cci = token.header.cci;
  return inst;
}

}  // namespace qfam
