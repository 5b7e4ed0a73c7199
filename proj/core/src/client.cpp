#include "qfam/client.hpp"

#include <thread>

#include "qfam/token.hpp"

namespace qfam {

const char* to_string(KeyShareMode mode) {
  switch (mode) {
    case KeyShareMode::kFresh: return "fresh";
    case KeyShareMode::kPrecomputed: return "precomputed";
    case KeyShareMode::kRandom: return "random";
  }
  return "unknown";
}

std::optional<KeyShareMode> key_share_mode_from_name(std::string_view name) {
  if (name == "fresh") return KeyShareMode::kFresh;
  if (name == "precomputed") return KeyShareMode::kPrecomputed;
  if (name == "random") return KeyShareMode::kRandom;
  return std::nullopt;
}

ClientConfig ClientConfig::legitimate() { return ClientConfig{}; }

ClientConfig ClientConfig::attacker() {
  ClientConfig c;
  c.group = GroupId::kSecp384r1;
  c.key_share_mode = KeyShareMode::kPrecomputed;
  c.solve_challenges = false;
  return c;
}

ClientEndpoint::ClientEndpoint(ClientConfig config, RandomSource& rng)
    : config_(config), rng_(rng) {}

FirstFlight ClientEndpoint::start_handshake() {
  FirstFlight ff;
  ff.msg.dcid.resize(8);
  ff.msg.scid.resize(8);
  rng_.fill(ff.msg.dcid);
  rng_.fill(ff.msg.scid);
  ff.msg.group_id = static_cast<std::uint16_t>(config_.group);
  switch (config_.key_share_mode) {
    case KeyShareMode::kFresh: {
      KeyShare ks = generate_keyshare(config_.group);
      ff.msg.key_share = ks.public_share;
      ff.key = std::move(ks);
      break;
    }
    case KeyShareMode::kPrecomputed:
      ff.msg.key_share = precomputed_share(config_.group);
      break;
    case KeyShareMode::kRandom:
      ff.msg.key_share.resize(public_share_size(config_.group));
      rng_.fill(ff.msg.key_share);
      break;
  }
  return ff;
}

RetryResponse ClientEndpoint::on_retry(const RetryPacket& pkt, std::uint16_t my_port,
                                       const InitialMessage& first) {
  RetryResponse r;
  r.msg = first;
  r.msg.dcid = pkt.scid;
  r.msg.token = pkt.token;
  if (!pkt.mitigation || !config_.qfam_capable || !config_.solve_challenges) return r;

  RetryToken token;
  try {
    token = decode_token(pkt.token);
  } catch (const TokenError& e) {
    throw ClientError(ClientErrc::kMalformedToken, e.what());
  }
  const Mrn start(rng_.below(Mrn::kCardinality));
  r.solution = solve(instance_for(token, my_port), start);
  patch_mrn(r.msg.token, r.solution->mrn);
  return r;
}

RetryResponse ClientEndpoint::on_legacy_retry(const LegacyRetryView& pkt,
                                              const InitialMessage& first) {
  RetryResponse r;
  r.msg = first;
  r.msg.dcid = pkt.scid;
  r.msg.token = pkt.token;
  return r;
}

// ---------------------------------------------------------------------------

ClientNode::ClientNode(ClientNodeOptions options, RandomSource& rng)
    : options_(std::move(options)), endpoint_(options_.config, rng) {}

bool ClientNode::single() const {
  return options_.config.request_rate <= 0 && !options_.max_rate;
}

void ClientNode::reconfigure(const ClientConfig& config, bool max_rate, bool active,
                             Duration now) {
  options_.config = config;
  options_.max_rate = max_rate;
  options_.active = active;
  endpoint_.set_config(config);
  pace_origin_ = now;
  paced_sent_ = 0;
  single_started_ = false;
  completed_ = false;
}

void ClientNode::start(Duration now, Outbox& out) {
  const bool fresh = options_.config.key_share_mode == KeyShareMode::kFresh;
  FirstFlight ff;
  {
    CpuScope scope(sink_.cpu(), fresh ? CpuCategory::kKeyExchange : CpuCategory::kOther);
    ff = endpoint_.start_handshake();
  }
  {
    CpuScope scope(sink_.cpu(), CpuCategory::kSend);
    out.send(options_.server, encode_message(ff.msg));
  }
  sink_.add(Counter::kSent);
  Bytes scid = ff.msg.scid;
  deadlines_.emplace_back(now + options_.handshake_timeout, scid);
  handshakes_.emplace(std::move(scid), Handshake{std::move(ff), now, State::kAwaitingRetry});
  ++awaiting_retry_;
}

void ClientNode::finish(const Bytes& scid, Duration now, bool success) {
  auto it = handshakes_.find(scid);
  if (it == handshakes_.end()) return;
  if (it->second.state == State::kAwaitingRetry) --awaiting_retry_;
  handshakes_.erase(it);
  if (single() && options_.active) {
    if (success) {
      completed_ = true;
    } else {
      single_started_ = false;
      pace_origin_ = now + options_.restart_backoff;
    }
  }
}

void ClientNode::handle_retry(Handshake& h, const Bytes& scid, ByteView data,
                              const RetryPacket* pkt, Outbox& out) {
  RetryResponse r;
  try {
    if (pkt == nullptr) {
      CpuScope scope(sink_.cpu(), CpuCategory::kToken);
      r = endpoint_.on_legacy_retry(decode_retry_legacy(data), h.first.msg);
    } else {
      CpuScope scope(sink_.cpu(), CpuCategory::kSolve);
      r = endpoint_.on_retry(*pkt, options_.self.port, h.first.msg);
    }
  } catch (const std::exception&) {
    sink_.add(Counter::kMalformed);
    return;
  }
  (void)scid;
  if (r.solution) {
    sink_.record_solve(r.solution->wall_time, r.solution->iterations);
    sink_.add(Counter::kSolutions);
  }
  {
    CpuScope scope(sink_.cpu(), CpuCategory::kSend);
    out.send(options_.server, encode_message(r.msg));
  }
  h.state = State::kAwaitingServer;
  --awaiting_retry_;
}

void ClientNode::on_datagram(ByteView data, const Address&, Duration now, Outbox& out) {
  if (data.empty()) return;
  const bool legacy_retry =
      !options_.config.qfam_capable && (data[0] & 0xF0) == kRetryFirstByte;

  HandshakeMessage msg;
  Bytes key;
  try {
    if (legacy_retry) {
      key = decode_retry_legacy(data).dcid;
    } else {
      msg = decode_message(data);
      key = std::visit([](const auto& m) { return m.dcid; }, msg);
    }
  } catch (const PacketError&) {
    sink_.add(Counter::kMalformed);
    return;
  }

  auto it = handshakes_.find(key);
  if (it == handshakes_.end()) return;  // late reply to an abandoned handshake
  Handshake& h = it->second;

  if (legacy_retry || std::holds_alternative<RetryPacket>(msg)) {
    if (h.state != State::kAwaitingRetry) return;
    sink_.add(Counter::kRetries);
    handle_retry(h, key, data, legacy_retry ? nullptr : &std::get<RetryPacket>(msg), out);
  } else if (const auto* shlo = std::get_if<ShloMessage>(&msg)) {
    sink_.add(Counter::kShlos);
    sink_.record_response(now - h.started);
    if (h.first.key) {
      CpuScope scope(sink_.cpu(), CpuCategory::kKeyExchange);
      try {
        (void)compute_shared(h.first.key->group, h.first.key->private_key,
                             shlo->key_share);
      } catch (const CryptoError&) {
        sink_.add(Counter::kInvalidKeyShares);
      }
    }
    finish(key, now, true);
  } else if (const auto* rej = std::get_if<RejectMessage>(&msg)) {
    switch (rej->reason) {
      case RejectReason::kBadToken:
        sink_.add(Counter::kRejectBadToken);
        // A fresh Retry may follow an expired token; wait for it.
        if (h.state == State::kAwaitingServer) {
          h.state = State::kAwaitingRetry;
          ++awaiting_retry_;
        }
        break;
      case RejectReason::kBadChallenge:
        sink_.add(Counter::kRejectBadChallenge);
        finish(key, now, false);
        break;
      case RejectReason::kOverloaded:
        sink_.add(Counter::kRejectOverloaded);
        finish(key, now, false);
        break;
      case RejectReason::kUnsupportedGroup:
        sink_.add(Counter::kRejectUnsupportedGroup);
        finish(key, now, false);
        break;
    }
  }
  while (!deadlines_.empty() && handshakes_.count(deadlines_.front().second) == 0) {
    deadlines_.pop_front();
  }
}

void ClientNode::expire(Duration now) {
  while (!deadlines_.empty() && deadlines_.front().first <= now) {
    Bytes scid = std::move(deadlines_.front().second);
    deadlines_.pop_front();
    if (handshakes_.count(scid) != 0) {
      sink_.add(Counter::kTimeouts);
      finish(scid, now, false);
    }
  }
  while (!deadlines_.empty() && handshakes_.count(deadlines_.front().second) == 0) {
    deadlines_.pop_front();
  }
}

std::optional<Duration> ClientNode::next_timer() const {
  std::optional<Duration> t;
  auto earliest = [&](Duration d) {
    if (!t || d < *t) t = d;
  };
  if (!deadlines_.empty()) earliest(deadlines_.front().first);
  if (options_.active) {
    if (options_.config.request_rate > 0) {
      const double offset = (static_cast<double>(paced_sent_) + 0.5) /
                            options_.config.request_rate;
      earliest(pace_origin_ + std::chrono::duration_cast<Duration>(
                                  std::chrono::duration<double>(offset)));
    } else if (single() && !single_started_) {
      earliest(pace_origin_);
    }
  }
  return t;
}

void ClientNode::on_timer(Duration now, Outbox& out) {
  expire(now);
  if (!options_.active) return;
  if (options_.config.request_rate > 0) {
    while (true) {
      const double offset = (static_cast<double>(paced_sent_) + 0.5) /
                            options_.config.request_rate;
      if (pace_origin_ + std::chrono::duration_cast<Duration>(
                             std::chrono::duration<double>(offset)) > now) {
        break;
      }
      ++paced_sent_;
      start(now, out);
    }
  } else if (single() && !single_started_ && pace_origin_ <= now) {
    single_started_ = true;
    start(now, out);
  }
}

bool ClientNode::has_background_work() const {
  return options_.active && options_.max_rate && options_.config.request_rate <= 0 &&
         awaiting_retry_ < options_.window;
}

void ClientNode::do_background_work(Duration now, Outbox& out) { start(now, out); }

// ---------------------------------------------------------------------------

FloodStats run_flood(const ClientConfig& config, Duration duration,
                     const Address& server, Endpoint& endpoint, std::size_t window) {
  SystemRandom rng;
  ClientNodeOptions options;
  options.config = config;
  options.server = server;
  options.self = endpoint.local_address();
  options.max_rate = config.request_rate <= 0;
  options.window = window;
  ClientNode node(options, rng);

  RealtimeDriver driver(node, endpoint, std::chrono::steady_clock::now());
  driver.start();
  std::this_thread::sleep_for(duration);
  driver.stop();

  const RoleSnapshot s = node.sink().snapshot();
  FloodStats stats;
  stats.sent = s.counts[Counter::kSent];
  stats.retries_received = s.counts[Counter::kRetries];
  stats.shlos = s.counts[Counter::kShlos];
  stats.rejects = s.counts.rejects();
  double solve_ms = 0;
  for (double v : s.solve_ms) solve_ms += v;
  stats.solve_time_total =
      std::chrono::nanoseconds(static_cast<std::int64_t>(solve_ms * 1e6));
  stats.cpu_time = std::chrono::nanoseconds(static_cast<std::int64_t>(s.cpu.total() * 1e9));
  return stats;
}

}  // namespace qfam
