#include <gtest/gtest.h>

#include "qfam/client.hpp"
#include "qfam/server.hpp"

namespace qfam {
namespace {

using namespace std::chrono_literals;

RetryPacket retry_with_cci(unsigned cci, const InitialMessage& first, RandomSource& rng,
                           bool mitigation = true) {
  static const TokenKeyStore keys = [] {
    DeterministicRandom k(1);
    return TokenKeyStore::generate(k);
  }();
  TokenHeader h;
  h.tin = rng.next_u64();
  h.cci = Cci(cci);
  RetryPacket p;
  p.mitigation = mitigation;
  p.dcid = first.scid;
  p.scid = {9, 9, 9, 9, 9, 9, 9, 9};
  p.token = encode_token(seal_token(keys, h, TokenBody{1, first.dcid, 1, {}},
                                    make_associated_data({}, h, p.scid)));
  return p;
}

TEST(ClientEndpoint, FirstFlightShapes) {
  DeterministicRandom rng(1);
  for (KeyShareMode mode : {KeyShareMode::kFresh, KeyShareMode::kPrecomputed,
                            KeyShareMode::kRandom}) {
    for (GroupId g : kAllGroups) {
      ClientConfig c;
      c.group = g;
      c.key_share_mode = mode;
      ClientEndpoint ep(c, rng);
      const FirstFlight ff = ep.start_handshake();
      EXPECT_EQ(ff.msg.dcid.size(), 8u);
      EXPECT_EQ(ff.msg.scid.size(), 8u);
      EXPECT_TRUE(ff.msg.token.empty());
      EXPECT_EQ(ff.msg.group_id, static_cast<std::uint16_t>(g));
      EXPECT_EQ(ff.msg.key_share.size(), public_share_size(g));
      EXPECT_EQ(ff.key.has_value(), mode == KeyShareMode::kFresh);
      if (mode == KeyShareMode::kPrecomputed) {
        EXPECT_EQ(ff.msg.key_share, precomputed_share(g));
      }
    }
  }
}

TEST(ClientEndpoint, SolvesWhenAsked) {
  DeterministicRandom rng(2);
  ClientEndpoint ep(ClientConfig::legitimate(), rng);
  const FirstFlight ff = ep.start_handshake();
  const RetryPacket retry = retry_with_cci(10, ff.msg, rng);
  const RetryResponse r = ep.on_retry(retry, 4433, ff.msg);
  ASSERT_TRUE(r.solution.has_value());
  EXPECT_EQ(r.msg.dcid, retry.scid);
  EXPECT_EQ(r.msg.scid, ff.msg.scid);
  EXPECT_EQ(r.msg.key_share, ff.msg.key_share);
  const RetryToken t = decode_token(r.msg.token);
  EXPECT_EQ(t.header.mrn, r.solution->mrn);
  EXPECT_TRUE(verify(instance_for(t, 4433), t.header.mrn));
  // Only the MRN bits differ from what the server sent.
  Bytes unpatched = r.msg.token;
  patch_mrn(unpatched, Mrn(0));
  EXPECT_EQ(unpatched, retry.token);
}

TEST(ClientEndpoint, EchoesWhenNotSolving) {
  DeterministicRandom rng(3);
  const FirstFlight ff = ClientEndpoint(ClientConfig::legitimate(), rng).start_handshake();
  const RetryPacket with_bit = retry_with_cci(12, ff.msg, rng);
  const RetryPacket without_bit = retry_with_cci(12, ff.msg, rng, false);

  ClientEndpoint solver(ClientConfig::legitimate(), rng);
  EXPECT_FALSE(solver.on_retry(without_bit, 1, ff.msg).solution.has_value());
  EXPECT_EQ(solver.on_retry(without_bit, 1, ff.msg).msg.token, without_bit.token);

  ClientConfig no_solve = ClientConfig::attacker();
  ClientEndpoint lazy(no_solve, rng);
  EXPECT_EQ(lazy.on_retry(with_bit, 1, ff.msg).msg.token, with_bit.token);

  ClientConfig legacy;
  legacy.qfam_capable = false;
  ClientEndpoint old(legacy, rng);
  EXPECT_EQ(old.on_retry(with_bit, 1, ff.msg).msg.token, with_bit.token);

  const LegacyRetryView v = decode_retry_legacy(encode_message(with_bit));
  const RetryResponse r = old.on_legacy_retry(v, ff.msg);
  EXPECT_EQ(r.msg.token, with_bit.token);
  EXPECT_EQ(r.msg.dcid, with_bit.scid);
}

TEST(ClientEndpoint, MalformedChallengeToken) {
  DeterministicRandom rng(4);
  ClientEndpoint ep(ClientConfig::legitimate(), rng);
  const FirstFlight ff = ep.start_handshake();
  RetryPacket p;
  p.mitigation = true;
  p.token = {1, 2, 3};
  try {
    ep.on_retry(p, 1, ff.msg);
    FAIL();
  } catch (const ClientError& e) {
    EXPECT_EQ(e.code(), ClientErrc::kMalformedToken);
  }
}

// ---------------------------------------------------------------------------

struct SimRig {
  explicit SimRig(MitigationPolicy policy, ClientNodeOptions options)
      : sim(SimOptions{InprocOptions{0, 100us, 1, 4096}, CostModel{}}),
        keys(std::make_shared<SharedKeyStore>(
            std::make_shared<const TokenKeyStore>(TokenKeyStore::generate(key_rng)))),
        server(keys, std::move(policy), server_rng, ServerOptions{true, 1'700'000'000}),
        node(server),
        client(with_addresses(std::move(options)), client_rng) {
    sim.add(node, kServer);
    sim.add(client, kClient);
  }

  static ClientNodeOptions with_addresses(ClientNodeOptions o) {
    o.server = kServer;
    o.self = kClient;
    return o;
  }

  static inline const Address kServer{ipv4_mapped(10, 0, 0, 1), 443};
  static inline const Address kClient{ipv4_mapped(10, 0, 0, 2), 5000};

  Simulation sim;
  DeterministicRandom key_rng{1};
  DeterministicRandom server_rng{2};
  DeterministicRandom client_rng{3};
  std::shared_ptr<SharedKeyStore> keys;
  ServerEndpoint server;
  ServerNode node;
  ClientNode client;
};

MitigationPolicy on(unsigned cci, bool reject_unsolved = true) {
  MitigationPolicy p;
  p.mode = MitigationMode::kOn;
  p.pinned_cci = Cci(cci);
  p.reject_unsolved = reject_unsolved;
  return p;
}

TEST(ClientNode, SingleHandshakeCompletes) {
  SimRig r(on(8), ClientNodeOptions{});
  r.sim.run_until(1s);
  EXPECT_TRUE(r.client.completed());
  const RoleSnapshot s = r.client.sink().snapshot();
  EXPECT_EQ(s.counts[Counter::kSent], 1u);
  EXPECT_EQ(s.counts[Counter::kRetries], 1u);
  EXPECT_EQ(s.counts[Counter::kSolutions], 1u);
  EXPECT_EQ(s.counts[Counter::kShlos], 1u);
  ASSERT_EQ(s.response_ms.size(), 1u);
  EXPECT_GT(s.response_ms[0], 0.4);  // two round trips of 100 us
  EXPECT_EQ(r.client.in_flight(), 0u);
}

TEST(ClientNode, LegacyClientNeedsLenientServer) {
  ClientNodeOptions o;
  o.config.qfam_capable = false;
  {
    SimRig r(on(12, false), o);
    r.sim.run_until(1s);
    EXPECT_TRUE(r.client.completed());
    EXPECT_EQ(r.server.sink().count(Counter::kEnqueuedLow), 1u);
  }
  {
    SimRig r(on(12, true), o);
    r.sim.run_until(1s);
    // Rejected, then retried after the backoff; with cci 12 success is rare.
    EXPECT_GE(r.client.sink().count(Counter::kRejectBadChallenge), 1u);
    EXPECT_GE(r.client.sink().count(Counter::kSent), 2u);
    EXPECT_LE(r.client.sink().count(Counter::kSent), 21u);
  }
}

TEST(ClientNode, PacedScheduleIsOpenLoop) {
  ClientNodeOptions o;
  o.config.request_rate = 10;
  SimRig r(MitigationPolicy{}, o);
  r.sim.run_until(std::chrono::milliseconds(1049));
  EXPECT_EQ(r.client.sink().count(Counter::kSent), 10u);  // at 50, 150, ... 950 ms
  r.sim.run_until(std::chrono::milliseconds(1051));
  EXPECT_EQ(r.client.sink().count(Counter::kSent), 11u);
}

TEST(ClientNode, MaxRateKeepsWindowFull) {
  ClientNodeOptions o;
  o.config = ClientConfig::attacker();
  o.max_rate = true;
  o.window = 4;
  DeterministicRandom rng(1);
  ClientNode node(o, rng);
  Outbox out;
  int started = 0;
  while (node.has_background_work()) {
    node.do_background_work(0s, out);
    ++started;
  }
  EXPECT_EQ(started, 4);
  EXPECT_EQ(out.size(), 4u);
}

TEST(ClientNode, TimeoutsAbandonHandshakes) {
  ClientNodeOptions o;
  o.server = Address{ipv4_mapped(10, 9, 9, 9), 1};  // nobody there
  o.handshake_timeout = 100ms;
  DeterministicRandom rng(1);
  ClientNode node(o, rng);
  Outbox out;
  node.on_timer(0s, out);
  EXPECT_EQ(node.in_flight(), 1u);
  ASSERT_TRUE(node.next_timer().has_value());
  EXPECT_EQ(*node.next_timer(), 100ms);
  node.on_timer(100ms, out);
  EXPECT_EQ(node.sink().count(Counter::kTimeouts), 1u);
  EXPECT_EQ(node.in_flight(), 0u);
  // Restarted after the backoff.
  EXPECT_EQ(*node.next_timer(), 150ms);
  node.on_timer(150ms, out);
  EXPECT_EQ(node.sink().count(Counter::kSent), 2u);
}

TEST(ClientNode, InactiveNodeIsSilent) {
  ClientNodeOptions o;
  o.active = false;
  DeterministicRandom rng(1);
  ClientNode node(o, rng);
  EXPECT_FALSE(node.next_timer().has_value());
  EXPECT_FALSE(node.has_background_work());
  node.reconfigure(ClientConfig::legitimate(), false, true, 3s);
  EXPECT_EQ(node.next_timer(), std::optional<Duration>(3s));
}

}  // namespace
}  // namespace qfam
