#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "qfam/bytes.hpp"
#include "qfam/keyexchange.hpp"
#include "qfam/metrics.hpp"
#include "qfam/packet.hpp"
#include "qfam/runtime.hpp"
#include "qfam/token.hpp"
#include "qfam/transport.hpp"

namespace qfam {

enum class MitigationMode { kOff, kOn, kAuto };
const char* to_string(MitigationMode mode);
std::optional<MitigationMode> mitigation_mode_from_name(std::string_view name);

struct Threshold {
  double rate = 0;  // Initial arrivals per second
  Cci cci;
};

/// (0,0) (20,8) (40,12) (80,14)
std::vector<Threshold> default_thresholds();

struct MitigationPolicy {
  MitigationMode mode = MitigationMode::kOff;
  std::vector<Threshold> thresholds = default_thresholds();
  /// Overrides the table when set.
  std::optional<Cci> pinned_cci;
  double ewma_half_life_s = 1.0;
  std::uint64_t token_lifetime_s = 30;
  std::size_t high_queue_capacity = 1024;
  std::size_t low_queue_capacity = 256;
  /// Reject failed challenges instead of queueing them at low priority.
  bool reject_unsolved = true;

  /// Errors: ConfigError(kInvalidValue).
  void validate() const;
  /// cci of the largest threshold whose rate is <= `rate`.
  Cci table_cci(double rate) const;
};

// Policy file: one `key = value` per line, `#` starts a comment.
//
//   mode = on                       # off | on | auto
//   cci = 12                        # pin; "table" to follow thresholds
//   thresholds = 0:0, 20:8, 40:12, 80:14
//   ewma_half_life_s = 1
//   token_lifetime_s = 30
//   high_queue_capacity = 1024
//   low_queue_capacity = 256
//   reject_unsolved = true
//
// Errors: ConfigError(kParse, kInvalidValue, kIo).
MitigationPolicy parse_policy(std::string_view text, MitigationPolicy base = {});
MitigationPolicy load_policy_file(const std::filesystem::path& path,
                                  MitigationPolicy base = {});
std::string format_policy(const MitigationPolicy& policy);

// Exponentially weighted arrival rate: each arrival adds ln2/H and the
// estimate halves every H seconds, so a steady stream of r per second
// converges to r.
class RateEstimator {
 public:
  explicit RateEstimator(double half_life_s = 1.0);

  void on_arrival(Duration now);
  double rate(Duration now) const;
  void set_half_life(double half_life_s);

 private:
  double decayed(Duration now) const;

  double half_life_s_;
  double rate_ = 0;
  Duration last_{0};
};

struct ServerOptions {
  /// Queue accepted handshakes and compute key exchanges later, one per
  /// process_high() call, instead of inside on_initial().
  bool defer_key_exchange = false;
  /// Unix seconds corresponding to now == 0.
  std::uint64_t unix_base_s = 0;
};

enum class Verdict { kAcceptHigh, kBadToken, kBadChallenge };

struct Validation {
  Verdict verdict = Verdict::kBadToken;
  std::optional<TokenErrc> token_error;  // set for kBadToken
};

struct SendShlo {
  ShloMessage msg;
};
struct SendRetry {
  RetryPacket packet;
};
struct SendReject {
  RejectMessage msg;
  std::optional<RetryPacket> fresh_retry;  // after an expired token
};
struct EnqueueHigh {};
struct EnqueueLow {};
struct Drop {};
using Action = std::variant<SendShlo, SendRetry, SendReject, EnqueueHigh, EnqueueLow, Drop>;

struct PendingHandshake {
  Address peer;
  Bytes client_scid;
  GroupId group = GroupId::kX25519;
  Bytes key_share;
};

/// A queued handshake finished later: SendShlo, or Drop for a bad key share.
struct Completion {
  Address peer;
  Action action;
};

// Server handshake state machine. Single-threaded; the key store may be
// rotated concurrently through the shared handle.
class ServerEndpoint {
 public:
  ServerEndpoint(std::shared_ptr<SharedKeyStore> keys, MitigationPolicy policy,
                 RandomSource& rng, ServerOptions options = {});

  Action on_initial(const InitialMessage& msg, const Address& src, Duration now);

  RetryPacket issue_enhanced_retry(const InitialMessage& msg, const Address& src,
                                   Duration now);
  /// One AEAD open and one digest at most.
  Validation validate_token_and_challenge(const InitialMessage& msg,
                                          const Address& src, Duration now);
  /// Current difficulty: the pinned value, else the table entry for the
  /// arrival rate estimate.
  Cci update_difficulty(Duration now);
  bool mitigation_active(Duration now);

  /// Completes up to `budget` low-priority handshakes; nothing while the high
  /// queue is non-empty.
  std::vector<Completion> drain_low_priority(std::size_t budget);
  /// Completes the oldest high-priority handshake, if any.
  std::optional<Completion> process_high();

  void set_policy(MitigationPolicy policy);
  const MitigationPolicy& policy() const { return policy_; }
  double rate_estimate(Duration now) const { return arrivals_.rate(now); }
  std::size_t high_queue_size() const { return high_.size(); }
  std::size_t low_queue_size() const { return low_.size(); }
  std::uint64_t key_exchanges_for(const Address& peer) const;

  RoleSink& sink() { return sink_; }
  const ServerOptions& options() const { return options_; }

 private:
  std::uint64_t unix_now(Duration now) const;
  RetryPacket make_retry(const InitialMessage& msg, const Address& src, Duration now,
                         Cci cci);
  Action admit(PendingHandshake pending, bool high_priority);
  Action complete(const PendingHandshake& pending);
  Action reject(const InitialMessage& msg, RejectReason reason,
                std::optional<RetryPacket> fresh = std::nullopt);

  std::shared_ptr<SharedKeyStore> keys_;
  MitigationPolicy policy_;
  RandomSource& rng_;
  ServerOptions options_;
  RateEstimator arrivals_;
  std::deque<PendingHandshake> high_;
  std::deque<PendingHandshake> low_;
  std::map<Address, std::uint64_t> key_exchanges_by_peer_;
  RoleSink sink_;
};

// Adapts ServerEndpoint to the node interface: decodes datagrams, runs the
// state machine and serializes its actions. Background work is one queued
// key exchange, high queue first.
class ServerNode final : public Node {
 public:
  explicit ServerNode(ServerEndpoint& server) : server_(server) {}

  void on_datagram(ByteView data, const Address& from, Duration now,
                   Outbox& out) override;
  bool has_background_work() const override;
  void do_background_work(Duration now, Outbox& out) override;
  RoleSink& sink() override { return server_.sink(); }

  ServerEndpoint& endpoint() { return server_; }

 private:
  void emit(const Action& action, const Address& to, Outbox& out);

  ServerEndpoint& server_;
};

}  // namespace qfam
