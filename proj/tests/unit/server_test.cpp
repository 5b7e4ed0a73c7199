#include <gtest/gtest.h>

#include <cmath>

#include "qfam/client.hpp"
#include "qfam/server.hpp"

namespace qfam {
namespace {

using namespace std::chrono_literals;

constexpr std::uint64_t kUnixBase = 1'700'000'000;

struct Rig {
  explicit Rig(MitigationPolicy policy, bool deferred = false)
      : keys(std::make_shared<SharedKeyStore>(
            std::make_shared<const TokenKeyStore>(TokenKeyStore::generate(key_rng)))),
        server(keys, std::move(policy), server_rng, ServerOptions{deferred, kUnixBase}),
        client(ClientConfig::legitimate(), client_rng) {}

  DeterministicRandom key_rng{1};
  DeterministicRandom server_rng{2};
  DeterministicRandom client_rng{3};
  std::shared_ptr<SharedKeyStore> keys;
  ServerEndpoint server;
  ClientEndpoint client;
  Address peer{ipv4_mapped(192, 0, 2, 10), 50000};
};

MitigationPolicy pinned(unsigned cci, bool reject_unsolved = true) {
  MitigationPolicy p;
  p.mode = MitigationMode::kOn;
  p.pinned_cci = Cci(cci);
  p.reject_unsolved = reject_unsolved;
  return p;
}

template <class T>
T as(const Action& a) {
  EXPECT_TRUE(std::holds_alternative<T>(a)) << "action index " << a.index();
  return std::get<T>(a);
}

TEST(Server, MitigationOffAnswersDirectly) {
  Rig r(MitigationPolicy{});
  const FirstFlight ff = r.client.start_handshake();
  const auto& shlo = as<SendShlo>(r.server.on_initial(ff.msg, r.peer, 0s));
  EXPECT_EQ(shlo.msg.dcid, ff.msg.scid);
  EXPECT_EQ(shlo.msg.group_id, ff.msg.group_id);
  EXPECT_EQ(compute_shared(GroupId::kX25519, ff.key->private_key, shlo.msg.key_share).size(),
            32u);
  EXPECT_EQ(r.server.key_exchanges_for(r.peer), 1u);
}

TEST(Server, RetryCarriesSealedChallenge) {
  Rig r(pinned(9));
  const FirstFlight ff = r.client.start_handshake();
  const RetryPacket retry = as<SendRetry>(r.server.on_initial(ff.msg, r.peer, 5s)).packet;
  EXPECT_TRUE(retry.mitigation);
  EXPECT_EQ(retry.dcid, ff.msg.scid);
  EXPECT_EQ(retry.scid.size(), 8u);

  const RetryToken t = decode_token(retry.token);
  EXPECT_EQ(t.header.cci, Cci(9));
  EXPECT_EQ(t.header.mrn, Mrn(0));
  const auto ad = make_associated_data(r.peer.ip, t.header, retry.scid);
  const TokenBody body = open_token(*r.keys->load(), t, ad, kUnixBase);
  EXPECT_EQ(body.odcid, ff.msg.dcid);
  EXPECT_EQ(body.source_port, r.peer.port);
  EXPECT_EQ(body.expiry, kUnixBase + 5 + 30);
  EXPECT_EQ(r.server.sink().count(Counter::kRetries), 1u);
}

TEST(Server, SolvedTokenIsAccepted) {
  Rig r(pinned(8));
  const FirstFlight ff = r.client.start_handshake();
  const RetryPacket retry = as<SendRetry>(r.server.on_initial(ff.msg, r.peer, 0s)).packet;
  const RetryResponse resp = r.client.on_retry(retry, r.peer.port, ff.msg);
  ASSERT_TRUE(resp.solution.has_value());
  EXPECT_EQ(resp.msg.dcid, retry.scid);

  const WorkCounters before = thread_work();
  const Validation v = r.server.validate_token_and_challenge(resp.msg, r.peer, 1s);
  const WorkCounters cost = thread_work() - before;
  EXPECT_EQ(v.verdict, Verdict::kAcceptHigh);
  EXPECT_EQ(cost.aead_ops, 1u);
  EXPECT_EQ(cost.digests, 1u);

  as<SendShlo>(r.server.on_initial(resp.msg, r.peer, 1s));
  EXPECT_EQ(r.server.sink().count(Counter::kAccepted), 1u);
}

TEST(Server, UnsolvedTokenRejectedOrDeprioritized) {
  for (bool reject_unsolved : {true, false}) {
    Rig r(pinned(15, reject_unsolved), true);
    const FirstFlight ff = r.client.start_handshake();
    const RetryPacket retry = as<SendRetry>(r.server.on_initial(ff.msg, r.peer, 0s)).packet;
    InitialMessage echo = ff.msg;
    echo.dcid = retry.scid;
    echo.token = retry.token;
    // MRN 0 fails cci 15 except with probability 2^-15; pick a failing one.
    Mrn wrong(0);
    while (verify(instance_for(decode_token(echo.token), r.peer.port), wrong)) {
      wrong = Mrn(wrong.value() + 1);
    }
    patch_mrn(echo.token, wrong);
    const Action a = r.server.on_initial(echo, r.peer, 0s);
    if (reject_unsolved) {
      EXPECT_EQ(as<SendReject>(a).msg.reason, RejectReason::kBadChallenge);
      EXPECT_EQ(r.server.low_queue_size(), 0u);
    } else {
      as<EnqueueLow>(a);
      EXPECT_EQ(r.server.low_queue_size(), 1u);
      const auto done = r.server.drain_low_priority(4);
      ASSERT_EQ(done.size(), 1u);
      as<SendShlo>(done[0].action);
    }
  }
}

TEST(Server, TamperedOrMisaddressedTokensAreBadTokens) {
  Rig r(pinned(0));
  const FirstFlight ff = r.client.start_handshake();
  const RetryPacket retry = as<SendRetry>(r.server.on_initial(ff.msg, r.peer, 0s)).packet;
  const RetryResponse resp = r.client.on_retry(retry, r.peer.port, ff.msg);

  InitialMessage tampered = resp.msg;
  tampered.token[kTokenHeaderSize + 3] ^= 1;
  Validation v = r.server.validate_token_and_challenge(tampered, r.peer, 0s);
  EXPECT_EQ(v.verdict, Verdict::kBadToken);
  EXPECT_EQ(v.token_error, TokenErrc::kAuthenticationFailed);

  Address other = r.peer;
  other.ip = ipv4_mapped(192, 0, 2, 11);
  v = r.server.validate_token_and_challenge(resp.msg, other, 0s);
  EXPECT_EQ(v.token_error, TokenErrc::kAuthenticationFailed);

  InitialMessage wrong_dcid = resp.msg;
  wrong_dcid.dcid = ff.msg.dcid;
  v = r.server.validate_token_and_challenge(wrong_dcid, r.peer, 0s);
  EXPECT_EQ(v.token_error, TokenErrc::kAuthenticationFailed);

  InitialMessage garbage = resp.msg;
  garbage.token.resize(5);
  v = r.server.validate_token_and_challenge(garbage, r.peer, 0s);
  EXPECT_EQ(v.token_error, TokenErrc::kTruncatedToken);

  const auto& rej = as<SendReject>(r.server.on_initial(tampered, r.peer, 0s));
  EXPECT_EQ(rej.msg.reason, RejectReason::kBadToken);
  EXPECT_FALSE(rej.fresh_retry.has_value());
}

TEST(Server, ExpiredTokenGetsFreshRetry) {
  Rig r(pinned(0));
  const FirstFlight ff = r.client.start_handshake();
  const RetryPacket retry = as<SendRetry>(r.server.on_initial(ff.msg, r.peer, 0s)).packet;
  const RetryResponse resp = r.client.on_retry(retry, r.peer.port, ff.msg);
  EXPECT_EQ(r.server.validate_token_and_challenge(resp.msg, r.peer, 30s).verdict,
            Verdict::kAcceptHigh);
  const auto& rej = as<SendReject>(r.server.on_initial(resp.msg, r.peer, 31s));
  EXPECT_EQ(rej.msg.reason, RejectReason::kBadToken);
  ASSERT_TRUE(rej.fresh_retry.has_value());
  EXPECT_EQ(rej.fresh_retry->dcid, ff.msg.scid);
}

TEST(Server, StatelessAcrossRestart) {
  Rig r(pinned(6));
  const FirstFlight ff = r.client.start_handshake();
  const RetryPacket retry = as<SendRetry>(r.server.on_initial(ff.msg, r.peer, 0s)).packet;
  const RetryResponse resp = r.client.on_retry(retry, r.peer.port, ff.msg);

  DeterministicRandom rng(99);
  ServerEndpoint restarted(r.keys, pinned(6), rng, ServerOptions{false, kUnixBase});
  as<SendShlo>(restarted.on_initial(resp.msg, r.peer, 2s));
}

TEST(Server, RotatedOutKeyIsBadToken) {
  Rig r(pinned(0));
  const FirstFlight ff = r.client.start_handshake();
  const RetryPacket retry = as<SendRetry>(r.server.on_initial(ff.msg, r.peer, 0s)).packet;
  const RetryResponse resp = r.client.on_retry(retry, r.peer.port, ff.msg);
  DeterministicRandom rng(5);
  r.keys->rotate(std::make_shared<const TokenKeyStore>(
      TokenKeyStore::generate(rng, KeySequence(1))));
  const Validation v = r.server.validate_token_and_challenge(resp.msg, r.peer, 0s);
  EXPECT_EQ(v.token_error, TokenErrc::kUnknownKeySequence);
}

TEST(Server, UnsupportedGroupAndBadShare) {
  Rig r(MitigationPolicy{});
  FirstFlight ff = r.client.start_handshake();
  ff.msg.group_id = 0x001E;
  EXPECT_EQ(as<SendReject>(r.server.on_initial(ff.msg, r.peer, 0s)).msg.reason,
            RejectReason::kUnsupportedGroup);
  ff.msg.group_id = 0x001D;
  ff.msg.key_share.assign(32, 0);  // low-order point
  as<Drop>(r.server.on_initial(ff.msg, r.peer, 0s));
  EXPECT_EQ(r.server.sink().count(Counter::kInvalidKeyShares), 1u);
  EXPECT_EQ(r.server.sink().count(Counter::kShlos), 0u);
}

TEST(Server, DeferredQueuesAndOverload) {
  MitigationPolicy p;
  p.high_queue_capacity = 2;
  p.low_queue_capacity = 1;
  Rig r(p, true);
  std::vector<Action> actions;
  for (int i = 0; i < 4; ++i) {
    actions.push_back(r.server.on_initial(r.client.start_handshake().msg, r.peer, 0s));
  }
  as<EnqueueHigh>(actions[0]);
  as<EnqueueHigh>(actions[1]);
  as<EnqueueLow>(actions[2]);
  EXPECT_EQ(as<SendReject>(actions[3]).msg.reason, RejectReason::kOverloaded);

  EXPECT_TRUE(r.server.drain_low_priority(8).empty());  // high queue first
  ASSERT_TRUE(r.server.process_high().has_value());
  ASSERT_TRUE(r.server.process_high().has_value());
  EXPECT_FALSE(r.server.process_high().has_value());
  EXPECT_EQ(r.server.drain_low_priority(8).size(), 1u);
  EXPECT_EQ(r.server.sink().count(Counter::kShlos), 3u);
}

TEST(Server, AutoModeFollowsArrivalRate) {
  MitigationPolicy p;
  p.mode = MitigationMode::kAuto;
  Rig r(p);
  EXPECT_FALSE(r.server.mitigation_active(0s));
  // 50 first flights per second for 5 s: estimate near 50, table says 12.
  Duration t = 0s;
  for (int i = 0; i < 250; ++i) {
    t = std::chrono::milliseconds(20 * i);
    r.server.on_initial(r.client.start_handshake().msg, r.peer, t);
  }
  EXPECT_NEAR(r.server.rate_estimate(t), 50, 5);
  EXPECT_EQ(r.server.update_difficulty(t), Cci(12));
  EXPECT_TRUE(r.server.mitigation_active(t));
  EXPECT_EQ(r.server.update_difficulty(t + 20s), Cci(0));
}

TEST(RateEstimator, ConvergesAndDecays) {
  RateEstimator e(1.0);
  for (int i = 0; i < 1000; ++i) e.on_arrival(std::chrono::milliseconds(10 * i));
  EXPECT_NEAR(e.rate(std::chrono::milliseconds(9990)), 100, 4);
  EXPECT_NEAR(e.rate(std::chrono::milliseconds(10990)), 50, 2);
  EXPECT_EQ(RateEstimator().rate(0s), 0);
}

TEST(Policy, TableLookup) {
  MitigationPolicy p;
  EXPECT_EQ(p.table_cci(0), Cci(0));
  EXPECT_EQ(p.table_cci(19.9), Cci(0));
  EXPECT_EQ(p.table_cci(20), Cci(8));
  EXPECT_EQ(p.table_cci(40), Cci(12));
  EXPECT_EQ(p.table_cci(1000), Cci(14));
}

TEST(Policy, ParseFile) {
  const MitigationPolicy p = parse_policy(
      "# comment\n"
      "mode = auto\n"
      "cci = table   # follow the table\n"
      "thresholds = 0:0, 10:4, 30:10\n"
      "ewma_half_life_s = 2.5\n"
      "token_lifetime_s = 60\n"
      "high_queue_capacity = 10\n"
      "low_queue_capacity = 3\n"
      "reject_unsolved = false\n");
  EXPECT_EQ(p.mode, MitigationMode::kAuto);
  EXPECT_FALSE(p.pinned_cci.has_value());
  ASSERT_EQ(p.thresholds.size(), 3u);
  EXPECT_EQ(p.thresholds[2].cci, Cci(10));
  EXPECT_EQ(p.ewma_half_life_s, 2.5);
  EXPECT_EQ(p.token_lifetime_s, 60u);
  EXPECT_EQ(p.high_queue_capacity, 10u);
  EXPECT_EQ(p.low_queue_capacity, 3u);
  EXPECT_FALSE(p.reject_unsolved);
  EXPECT_EQ(format_policy(parse_policy(format_policy(p))), format_policy(p));
}

TEST(Policy, ParseErrors) {
  auto code_of = [](const char* text) {
    try {
      parse_policy(text);
    } catch (const ConfigError& e) {
      return e.code();
    }
    ADD_FAILURE() << text;
    return ConfigErrc::kIo;
  };
  EXPECT_EQ(code_of("bogus = 1"), ConfigErrc::kParse);
  EXPECT_EQ(code_of("mode on"), ConfigErrc::kParse);
  EXPECT_EQ(code_of("cci = 16"), ConfigErrc::kInvalidValue);
  EXPECT_EQ(code_of("cci = x"), ConfigErrc::kParse);
  EXPECT_EQ(code_of("mode = sometimes"), ConfigErrc::kInvalidValue);
  EXPECT_EQ(code_of("thresholds = 20:8, 10:12"), ConfigErrc::kInvalidValue);
  EXPECT_EQ(code_of("thresholds = 0:12, 10:8"), ConfigErrc::kInvalidValue);
  EXPECT_EQ(code_of("ewma_half_life_s = 0"), ConfigErrc::kInvalidValue);
  EXPECT_EQ(code_of("reject_unsolved = maybe"), ConfigErrc::kParse);
  try {
    load_policy_file("/nonexistent/policy");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.code(), ConfigErrc::kIo);
  }
}

TEST(ServerNode, MalformedDatagramsAreCounted) {
  Rig r(MitigationPolicy{});
  ServerNode node(r.server);
  Outbox out;
  const Bytes junk{0x02, 0x00};
  node.on_datagram(junk, r.peer, 0s, out);
  node.on_datagram(encode_message(RejectMessage{{1}, RejectReason::kBadToken}), r.peer, 0s,
                   out);
  EXPECT_EQ(out.size(), 0u);
  EXPECT_EQ(r.server.sink().count(Counter::kMalformed), 2u);

  node.on_datagram(encode_message(r.client.start_handshake().msg), r.peer, 0s, out);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.items()[0].to, r.peer);
  EXPECT_TRUE(std::holds_alternative<ShloMessage>(decode_message(out.items()[0].data)));
}

}  // namespace
}  // namespace qfam
