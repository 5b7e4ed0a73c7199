#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "qfam/challenge.hpp"
#include "qfam/keyexchange.hpp"
#include "qfam/metrics.hpp"
#include "qfam/packet.hpp"
#include "qfam/random.hpp"
#include "qfam/runtime.hpp"
#include "qfam/transport.hpp"

namespace qfam {

enum class ClientErrc { kMalformedToken };
using ClientError = CodedError<ClientErrc>;

enum class KeyShareMode {
  kFresh,        // new key pair per handshake
  kPrecomputed,  // one valid share reused forever
  kRandom,       // random bytes of the right length
};
const char* to_string(KeyShareMode mode);
std::optional<KeyShareMode> key_share_mode_from_name(std::string_view name);

struct ClientConfig {
  GroupId group = GroupId::kX25519;
  bool qfam_capable = true;
  double request_rate = 0;  // 0: a single handshake
  KeyShareMode key_share_mode = KeyShareMode::kFresh;
  bool solve_challenges = true;

  static ClientConfig legitimate();
  /// Precomputed secp384r1 share, no solving.
  static ClientConfig attacker();
};

struct FirstFlight {
  InitialMessage msg;
  std::optional<KeyShare> key;  // kept in fresh mode to finish the exchange
};

struct RetryResponse {
  InitialMessage msg;
  std::optional<ChallengeSolution> solution;
};

class ClientEndpoint {
 public:
  ClientEndpoint(ClientConfig config, RandomSource& rng);

  /// Random 8-byte DCID and SCID, empty token.
  FirstFlight start_handshake();

  /// Solves the challenge when the mitigation bit is set and this client
  /// participates; otherwise echoes the token unchanged.
  /// Errors: ClientError(kMalformedToken).
  RetryResponse on_retry(const RetryPacket& pkt, std::uint16_t my_port,
                         const InitialMessage& first);
  /// What a client unaware of the enhancement does with any Retry.
  RetryResponse on_legacy_retry(const LegacyRetryView& pkt, const InitialMessage& first);

  const ClientConfig& config() const { return config_; }
  void set_config(const ClientConfig& config) { config_ = config; }

 private:
  ClientConfig config_;
  RandomSource& rng_;
};

struct ClientNodeOptions {
  ClientConfig config;
  Address server;
  Address self;             // where the node is reachable; its port feeds the puzzle
  bool max_rate = false;    // with request_rate 0: as fast as possible
  std::size_t window = 64;  // max-rate: handshakes awaiting a Retry
  Duration handshake_timeout = std::chrono::seconds(2);
  Duration restart_backoff = std::chrono::milliseconds(50);  // single mode, after a failure
  bool active = true;
};

// Drives handshakes against one server. Three schedules:
//   single   request_rate 0, max_rate false: one handshake, restarted
//            restart_backoff after a reject or timeout until it succeeds
//   paced    open loop, the k-th start at origin + (k + 0.5) / rate
//   max rate keeps `window` handshakes waiting for a Retry; a slot frees once
//            the answer is sent
class ClientNode final : public Node {
 public:
  ClientNode(ClientNodeOptions options, RandomSource& rng);

  void on_datagram(ByteView data, const Address& from, Duration now,
                   Outbox& out) override;
  std::optional<Duration> next_timer() const override;
  void on_timer(Duration now, Outbox& out) override;
  bool has_background_work() const override;
  void do_background_work(Duration now, Outbox& out) override;
  RoleSink& sink() override { return sink_; }

  /// Switches schedule and profile; pacing restarts at `now`.
  void reconfigure(const ClientConfig& config, bool max_rate, bool active, Duration now);
  bool completed() const { return completed_; }
  std::size_t in_flight() const { return handshakes_.size(); }

 private:
  enum class State { kAwaitingRetry, kAwaitingServer };
  struct Handshake {
    FirstFlight first;
    Duration started{0};
    State state = State::kAwaitingRetry;
  };

  bool single() const;
  void start(Duration now, Outbox& out);
  void finish(const Bytes& scid, Duration now, bool success);
  void handle_retry(Handshake& h, const Bytes& scid, ByteView data,
                    const RetryPacket* pkt, Outbox& out);
  void expire(Duration now);

  ClientNodeOptions options_;
  ClientEndpoint endpoint_;
  RoleSink sink_;
  std::map<Bytes, Handshake> handshakes_;
  std::deque<std::pair<Duration, Bytes>> deadlines_;
  std::size_t awaiting_retry_ = 0;
  Duration pace_origin_{0};
  std::uint64_t paced_sent_ = 0;
  bool completed_ = false;
  bool single_started_ = false;
};

struct FloodStats {
  std::uint64_t sent = 0;
  std::uint64_t retries_received = 0;
  std::uint64_t shlos = 0;
  std::uint64_t rejects = 0;
  std::chrono::nanoseconds solve_time_total{0};
  std::chrono::nanoseconds cpu_time{0};
};

/// Open-loop flood in real time over `endpoint`; request_rate 0 floods as fast
/// as possible.
FloodStats run_flood(const ClientConfig& config, Duration duration,
                     const Address& server, Endpoint& endpoint,
                     std::size_t window = 64);

}  // namespace qfam
