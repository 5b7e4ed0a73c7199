#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "qfam/challenge.hpp"
#include "qfam/random.hpp"

namespace qfam {
namespace {

ChallengeInstance instance_from(const std::vector<std::string>& f) {
  ChallengeInstance in;
  const Bytes icv = from_hex(f[1]);
  std::copy(icv.begin(), icv.end(), in.icv.begin());
  in.tin = std::stoull(f[2]);
  in.port = static_cast<std::uint16_t>(std::stoul(f[3]));
  in.cci = Cci(std::stoul(f[4]));
  return in;
}

TEST(Challenge, DigestsMatchOracle) {
  int n = 0;
  for (const auto& f : testing::fixture_records("challenge_vectors.txt")) {
    if (f[0] != "digest") continue;
    const ChallengeInstance in = instance_from(f);
    EXPECT_EQ(to_hex(challenge_digest(in, Mrn(std::stoul(f[5])))), f[6]);
    ++n;
  }
  EXPECT_EQ(n, 16);
}

TEST(Challenge, SolveMatchesOracle) {
  int n = 0;
  for (const auto& f : testing::fixture_records("challenge_vectors.txt")) {
    if (f[0] != "solve") continue;
    const ChallengeInstance in = instance_from(f);
    const ChallengeSolution s = solve(in, Mrn(std::stoul(f[5])));
    EXPECT_EQ(s.mrn.value(), std::stoul(f[6]));
    EXPECT_EQ(s.iterations, std::stoull(f[7]));
    EXPECT_TRUE(verify(in, s.mrn));
    ++n;
  }
  EXPECT_EQ(n, 4);  // includes a search that wraps past 2^28 - 1
}

TEST(Challenge, InputLayout) {
  ChallengeInstance in;
  in.icv.fill(0x11);
  in.tin = 0x0102030405060708;
  in.port = 0xabcd;
  in.cci = Cci(9);
  EXPECT_EQ(to_hex(challenge_input(in, Mrn(0x0fedcba))),
            "11111111111111111111111111111111" "0102030405060708" "abcd" "09" "00fedcba");
}

TEST(Challenge, LeadingZeroBits) {
  Digest d{};
  EXPECT_EQ(leading_zero_bits(d), 256u);
  d[0] = 0x80;
  EXPECT_EQ(leading_zero_bits(d), 0u);
  d[0] = 0x01;
  EXPECT_EQ(leading_zero_bits(d), 7u);
  d[0] = 0;
  d[1] = 0x10;
  EXPECT_EQ(leading_zero_bits(d), 11u);
}

TEST(Challenge, CciZeroAcceptsAnything) {
  ChallengeInstance in;
  DeterministicRandom rng(1);
  for (int i = 0; i < 100; ++i) {
    const Mrn r(rng.below(Mrn::kCardinality));
    EXPECT_TRUE(verify(in, r));
    EXPECT_EQ(solve(in, r).iterations, 1u);
    EXPECT_EQ(solve(in, r).mrn, r);
  }
}

TEST(Challenge, VerifyRejectsMostWrongAnswers) {
  ChallengeInstance in;
  in.tin = 77;
  in.cci = Cci(12);
  const ChallengeSolution s = solve(in, Mrn(0));
  EXPECT_TRUE(verify(in, s.mrn));
  // Other ports and TINs define different puzzles.
  ChallengeInstance other = in;
  other.port = 1;
  int accepted = 0;
  for (std::uint32_t r = 0; r < 4096; ++r) accepted += verify(other, Mrn(r)) ? 1 : 0;
  EXPECT_LT(accepted, 12);
}

TEST(Challenge, VerifyCostsOneDigest) {
  ChallengeInstance in;
  in.cci = Cci(15);
  const auto before = digest_evaluations();
  (void)verify(in, Mrn(5));
  EXPECT_EQ(digest_evaluations() - before, 1u);
}

TEST(Challenge, SolveCountsItsDigests) {
  ChallengeInstance in;
  in.cci = Cci(8);
  const auto before = digest_evaluations();
  const ChallengeSolution s = solve(in, Mrn(100));
  EXPECT_EQ(digest_evaluations() - before, s.iterations);
}

TEST(Challenge, ExhaustedWhenBudgetRunsOut) {
  ChallengeInstance in;
  in.cci = Cci(15);
  std::uint32_t r = 0;
  while (verify(in, Mrn(r))) ++r;
  SolveOptions bounded;
  bounded.max_candidates = 1;
  try {
    solve(in, Mrn(r), bounded);
    FAIL();
  } catch (const ChallengeError& e) {
    EXPECT_EQ(e.code(), ChallengeErrc::kExhausted);
  }
}

TEST(Challenge, CancelledBetweenBatches) {
  // An instance whose first solution lies beyond the first polling point.
  ChallengeInstance in;
  in.cci = Cci(15);
  for (std::uint64_t tin = 0;; ++tin) {
    in.tin = tin;
    if (solve(in, Mrn(0)).iterations > 0x10000) break;
  }
  std::atomic<bool> cancel{true};
  SolveOptions options;
  options.cancel = &cancel;
  try {
    solve(in, Mrn(0), options);
    FAIL() << "solve ignored cancellation";
  } catch (const ChallengeError& e) {
    EXPECT_EQ(e.code(), ChallengeErrc::kCancelled);
  }
}

TEST(Challenge, InstanceFromToken) {
  RetryToken t;
  t.icv.fill(3);
  t.header.tin = 99;
  t.header.cci = Cci(7);
  t.header.mrn = Mrn(12345);
  const ChallengeInstance in = instance_for(t, 8443);
  EXPECT_EQ(in.icv, t.icv);
  EXPECT_EQ(in.tin, 99u);
  EXPECT_EQ(in.port, 8443);
  EXPECT_EQ(in.cci, Cci(7));
}

}  // namespace
}  // namespace qfam
