#include <benchmark/benchmark.h>

#include "qfam/challenge.hpp"
#include "qfam/keyexchange.hpp"
#include "qfam/random.hpp"
#include "qfam/token.hpp"

namespace qfam {
namespace {

ChallengeInstance instance(RandomSource& rng, unsigned cci) {
  ChallengeInstance in;
  rng.fill(in.icv);
  in.tin = rng.next_u64();
  in.port = 443;
  in.cci = Cci(cci);
  return in;
}

void BM_Digest(benchmark::State& state) {
  DeterministicRandom rng(1);
  const ChallengeInstance in = instance(rng, 0);
  std::uint32_t r = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(challenge_digest(in, Mrn(r++ & 0xfffffff)));
  }
}
BENCHMARK(BM_Digest);

void BM_Solve(benchmark::State& state) {
  DeterministicRandom rng(2);
  const unsigned cci = static_cast<unsigned>(state.range(0));
  std::uint64_t iterations = 0;
  for (auto _ : state) {
    const ChallengeSolution s = solve(instance(rng, cci), Mrn(0));
    iterations += s.iterations;
  }
  state.counters["iterations"] =
      benchmark::Counter(static_cast<double>(iterations), benchmark::Counter::kAvgIterations);
}
BENCHMARK(BM_Solve)->DenseRange(0, 14, 2)->Unit(benchmark::kMicrosecond);

void BM_Verify(benchmark::State& state) {
  DeterministicRandom rng(3);
  const ChallengeInstance in = instance(rng, static_cast<unsigned>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(verify(in, Mrn(12345)));
}
BENCHMARK(BM_Verify)->Arg(0)->Arg(12);

struct TokenFixture {
  DeterministicRandom rng{4};
  TokenKeyStore keys = TokenKeyStore::generate(rng);
  TokenHeader header;
  TokenBody body{1'700'000'030, Bytes(8, 0xaa), 50000, {}};
  AssociatedData ad;

  TokenFixture() {
    header.tin = 42;
    header.cci = Cci(12);
    ad = make_associated_data(IpAddress{}, header, Bytes(8, 0xbb));
  }
};

void BM_Seal(benchmark::State& state) {
  TokenFixture f;
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode_token(seal_token(f.keys, f.header, f.body, f.ad)));
  }
}
BENCHMARK(BM_Seal);

void BM_Open(benchmark::State& state) {
  TokenFixture f;
  const Bytes wire = encode_token(seal_token(f.keys, f.header, f.body, f.ad));
  for (auto _ : state) {
    benchmark::DoNotOptimize(open_token(f.keys, decode_token(wire), f.ad, 1'700'000'000));
  }
}
BENCHMARK(BM_Open);

void BM_Keygen(benchmark::State& state) {
  const GroupId g = kAllGroups[static_cast<std::size_t>(state.range(0))];
  state.SetLabel(std::string(group_name(g)));
  for (auto _ : state) benchmark::DoNotOptimize(generate_keyshare(g));
}
BENCHMARK(BM_Keygen)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);

void BM_Derive(benchmark::State& state) {
  const GroupId g = kAllGroups[static_cast<std::size_t>(state.range(0))];
  state.SetLabel(std::string(group_name(g)));
  const KeyShare mine = generate_keyshare(g);
  const Bytes& peer = precomputed_share(g);
  for (auto _ : state) benchmark::DoNotOptimize(compute_shared(g, mine.private_key, peer));
}
BENCHMARK(BM_Derive)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);

}  // namespace
}  // namespace qfam

BENCHMARK_MAIN();
