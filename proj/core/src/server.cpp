#include "qfam/server.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "qfam/challenge.hpp"

namespace qfam {

const char* to_string(MitigationMode mode) {
  switch (mode) {
    case MitigationMode::kOff: return "off";
    case MitigationMode::kOn: return "on";
    case MitigationMode::kAuto: return "auto";
  }
  return "unknown";
}

std::optional<MitigationMode> mitigation_mode_from_name(std::string_view name) {
  if (name == "off") return MitigationMode::kOff;
  if (name == "on") return MitigationMode::kOn;
  if (name == "auto") return MitigationMode::kAuto;
  return std::nullopt;
}

std::vector<Threshold> default_thresholds() {
  return {{0, Cci(0)}, {20, Cci(8)}, {40, Cci(12)}, {80, Cci(14)}};
}

namespace {

[[noreturn]] void invalid(const std::string& what) {
  throw ConfigError(ConfigErrc::kInvalidValue, what);
}

[[noreturn]] void parse_error(const std::string& what) {
  throw ConfigError(ConfigErrc::kParse, what);
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(std::string_view v, const std::string& key) {
  try {
    std::size_t used = 0;
    const std::string s(v);
    const double d = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return d;
  } catch (const std::exception&) {
    parse_error(key + ": not a number: " + std::string(v));
  }
}

std::uint64_t to_uint(std::string_view v, const std::string& key) {
  const double d = to_double(v, key);
  if (d < 0 || d != std::floor(d)) invalid(key + ": expected a non-negative integer");
  return static_cast<std::uint64_t>(d);
}

Cci to_cci(std::string_view v, const std::string& key) {
  const std::uint64_t n = to_uint(v, key);
  if (n > Cci::kMax) invalid(key + ": cci must be 0..15");
  return Cci(n);
}

bool to_bool(std::string_view v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  parse_error(key + ": expected true or false");
}

std::vector<Threshold> to_thresholds(std::string_view v) {
  std::vector<Threshold> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    const std::string_view item = trim(v.substr(0, comma));
    v = comma == std::string_view::npos ? std::string_view{} : v.substr(comma + 1);
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) parse_error("thresholds: expected rate:cci");
    out.push_back({to_double(trim(item.substr(0, colon)), "thresholds"),
                   to_cci(trim(item.substr(colon + 1)), "thresholds")});
  }
  return out;
}

}  // namespace

void MitigationPolicy::validate() const {
  if (thresholds.empty()) invalid("thresholds must not be empty");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i].rate >= 0)) invalid("threshold rates must be >= 0");
    if (i > 0 && !(thresholds[i - 1].rate < thresholds[i].rate)) {
      invalid("thresholds must be sorted by ascending rate");
    }
    if (i > 0 && thresholds[i].cci < thresholds[i - 1].cci) {
      invalid("threshold cci values must be non-decreasing");
    }
  }
  if (!(ewma_half_life_s > 0)) invalid("ewma_half_life_s must be positive");
  if (token_lifetime_s == 0) invalid("token_lifetime_s must be positive");
}

Cci MitigationPolicy::table_cci(double rate) const {
  Cci cci;
  for (const Threshold& t : thresholds) {
    if (t.rate <= rate) cci = t.cci;
  }
  return cci;
}

MitigationPolicy parse_policy(std::string_view text, MitigationPolicy policy) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      parse_error("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));

    if (key == "mode") {
      auto m = mitigation_mode_from_name(value);
      if (!m) invalid("mode must be off, on or auto");
      policy.mode = *m;
    } else if (key == "cci") {
      if (value == "table") {
        policy.pinned_cci.reset();
      } else {
        policy.pinned_cci = to_cci(value, key);
      }
    } else if (key == "thresholds") {
      policy.thresholds = to_thresholds(value);
    } else if (key == "ewma_half_life_s") {
      policy.ewma_half_life_s = to_double(value, key);
    } else if (key == "token_lifetime_s") {
      policy.token_lifetime_s = to_uint(value, key);
    } else if (key == "high_queue_capacity") {
      policy.high_queue_capacity = to_uint(value, key);
    } else if (key == "low_queue_capacity") {
      policy.low_queue_capacity = to_uint(value, key);
    } else if (key == "reject_unsolved") {
      policy.reject_unsolved = to_bool(value, key);
    } else {
      parse_error("line " + std::to_string(line_no) + ": unknown key " + key);
    }
  }
  policy.validate();
  return policy;
}

MitigationPolicy load_policy_file(const std::filesystem::path& path,
                                  MitigationPolicy base) {
  std::ifstream in(path);
  if (!in) throw ConfigError(ConfigErrc::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_policy(ss.str(), std::move(base));
}

std::string format_policy(const MitigationPolicy& p) {
  std::ostringstream out;
  out << "mode = " << to_string(p.mode) << '\n';
  out << "cci = ";
  if (p.pinned_cci) {
    out << unsigned{p.pinned_cci->value()};
  } else {
    out << "table";
  }
  out << "\nthresholds = ";
  for (std::size_t i = 0; i < p.thresholds.size(); ++i) {
    if (i > 0) out << ", ";
    out << p.thresholds[i].rate << ':' << unsigned{p.thresholds[i].cci.value()};
  }
  out << "\newma_half_life_s = " << p.ewma_half_life_s
      << "\ntoken_lifetime_s = " << p.token_lifetime_s
      << "\nhigh_queue_capacity = " << p.high_queue_capacity
      << "\nlow_queue_capacity = " << p.low_queue_capacity
      << "\nreject_unsolved = " << (p.reject_unsolved ? "true" : "false") << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------

RateEstimator::RateEstimator(double half_life_s) : half_life_s_(half_life_s) {}

double RateEstimator::decayed(Duration now) const {
  const double dt = std::max(0.0, std::chrono::duration<double>(now - last_).count());
  return rate_ * std::exp2(-dt / half_life_s_);
}

void RateEstimator::on_arrival(Duration now) {
  rate_ = decayed(now) + std::log(2.0) / half_life_s_;
  last_ = std::max(last_, now);
}

double RateEstimator::rate(Duration now) const { return decayed(now); }

void RateEstimator::set_half_life(double half_life_s) { half_life_s_ = half_life_s; }

// ---------------------------------------------------------------------------

ServerEndpoint::ServerEndpoint(std::shared_ptr<SharedKeyStore> keys,
                               MitigationPolicy policy, RandomSource& rng,
                               ServerOptions options)
    : keys_(std::move(keys)),
      policy_(std::move(policy)),
      rng_(rng),
      options_(options),
      arrivals_(policy_.ewma_half_life_s) {
  policy_.validate();
}

void ServerEndpoint::set_policy(MitigationPolicy policy) {
  policy.validate();
  policy_ = std::move(policy);
  arrivals_.set_half_life(policy_.ewma_half_life_s);
}

std::uint64_t ServerEndpoint::unix_now(Duration now) const {
  return options_.unix_base_s +
         static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::seconds>(now).count());
}

Cci ServerEndpoint::update_difficulty(Duration now) {
  if (policy_.pinned_cci) return *policy_.pinned_cci;
  return policy_.table_cci(arrivals_.rate(now));
}

bool ServerEndpoint::mitigation_active(Duration now) {
  switch (policy_.mode) {
    case MitigationMode::kOff: return false;
    case MitigationMode::kOn: return true;
    case MitigationMode::kAuto: return update_difficulty(now).value() > 0;
  }
  return false;
}

std::uint64_t ServerEndpoint::key_exchanges_for(const Address& peer) const {
  auto it = key_exchanges_by_peer_.find(peer);
  return it == key_exchanges_by_peer_.end() ? 0 : it->second;
}

RetryPacket ServerEndpoint::make_retry(const InitialMessage& msg, const Address& src,
                                       Duration now, Cci cci) {
  CpuScope scope(sink_.cpu(), CpuCategory::kToken);
  const auto store = keys_->load();

  TokenHeader header;
  header.type = TokenType::kRetry;
  header.key_sequence = store->active_sequence();
  header.tin = rng_.next_u64();
  header.cci = cci;

  TokenBody body;
  body.expiry = unix_now(now) + policy_.token_lifetime_s;
  body.odcid = msg.dcid;
  body.source_port = src.port;

  Bytes rscid(8);
  rng_.fill(rscid);
  const AssociatedData ad = make_associated_data(src.ip, header, rscid);

  RetryPacket pkt;
  pkt.mitigation = true;
  pkt.version = msg.version;
  pkt.dcid = msg.scid;
  pkt.scid = std::move(rscid);
  pkt.token = encode_token(seal_token(*store, header, body, ad));
  sink_.add(Counter::kRetries);
  return pkt;
}

RetryPacket ServerEndpoint::issue_enhanced_retry(const InitialMessage& msg,
                                                 const Address& src, Duration now) {
  return make_retry(msg, src, now, update_difficulty(now));
}

Validation ServerEndpoint::validate_token_and_challenge(const InitialMessage& msg,
                                                        const Address& src,
                                                        Duration now) {
  CpuScope scope(sink_.cpu(), CpuCategory::kToken);
  const auto bad_token = [](TokenErrc e) { return Validation{Verdict::kBadToken, e}; };
  try {
    const RetryToken token = decode_token(msg.token);
    if (token.header.type != TokenType::kRetry) return bad_token(TokenErrc::kInvalidField);
    // The client addresses its second Initial to the Retry's SCID.
    const AssociatedData ad = make_associated_data(src.ip, token.header, msg.dcid);
    (void)open_token(*keys_->load(), token, ad, unix_now(now));
    if (!verify(instance_for(token, src.port), token.header.mrn)) {
      return {Verdict::kBadChallenge, std::nullopt};
    }
    return {Verdict::kAcceptHigh, std::nullopt};
  } catch (const TokenError& e) {
    return bad_token(e.code());
  } catch (const std::invalid_argument&) {
    return bad_token(TokenErrc::kInvalidField);
  }
}

Action ServerEndpoint::reject(const InitialMessage& msg, RejectReason reason,
                              std::optional<RetryPacket> fresh) {
  switch (reason) {
    case RejectReason::kBadToken: sink_.add(Counter::kRejectBadToken); break;
    case RejectReason::kBadChallenge: sink_.add(Counter::kRejectBadChallenge); break;
    case RejectReason::kOverloaded: sink_.add(Counter::kRejectOverloaded); break;
    case RejectReason::kUnsupportedGroup: sink_.add(Counter::kRejectUnsupportedGroup); break;
  }
  return SendReject{RejectMessage{msg.scid, reason}, std::move(fresh)};
}

Action ServerEndpoint::on_initial(const InitialMessage& msg, const Address& src,
                                  Duration now) {
  GroupId group;
  try {
    group = group_from_wire(msg.group_id);
  } catch (const CryptoError&) {
    return reject(msg, RejectReason::kUnsupportedGroup);
  }
  PendingHandshake pending{src, msg.scid, group, msg.key_share};

  if (msg.token.empty()) {
    arrivals_.on_arrival(now);
    if (mitigation_active(now)) {
      return SendRetry{make_retry(msg, src, now, update_difficulty(now))};
    }
    return admit(std::move(pending), true);
  }

  const Validation v = validate_token_and_challenge(msg, src, now);
  switch (v.verdict) {
    case Verdict::kAcceptHigh:
      sink_.add(Counter::kAccepted);
      return admit(std::move(pending), true);
    case Verdict::kBadChallenge:
      if (policy_.reject_unsolved) return reject(msg, RejectReason::kBadChallenge);
      return admit(std::move(pending), false);
    case Verdict::kBadToken:
      break;
  }
  std::optional<RetryPacket> fresh;
  if (v.token_error == TokenErrc::kExpired) {
    fresh = make_retry(msg, src, now, update_difficulty(now));
  }
  return reject(msg, RejectReason::kBadToken, std::move(fresh));
}

Action ServerEndpoint::admit(PendingHandshake pending, bool high_priority) {
  if (high_priority) {
    if (!options_.defer_key_exchange) return complete(pending);
    if (high_.size() < policy_.high_queue_capacity) {
      high_.push_back(std::move(pending));
      return EnqueueHigh{};
    }
  }
  if (low_.size() < policy_.low_queue_capacity) {
    low_.push_back(std::move(pending));
    sink_.add(Counter::kEnqueuedLow);
    return EnqueueLow{};
  }
  sink_.add(Counter::kRejectOverloaded);
  return SendReject{RejectMessage{pending.client_scid, RejectReason::kOverloaded},
                    std::nullopt};
}

Action ServerEndpoint::complete(const PendingHandshake& pending) {
  CpuScope scope(sink_.cpu(), CpuCategory::kKeyExchange);
  ShloMessage shlo;
  try {
    KeyShare mine = generate_keyshare(pending.group);
    (void)compute_shared(pending.group, mine.private_key, pending.key_share);
    shlo.key_share = std::move(mine.public_share);
  } catch (const CryptoError&) {
    sink_.add(Counter::kInvalidKeyShares);
    return Drop{};
  }
  sink_.add(Counter::kKeyExchanges);
  ++key_exchanges_by_peer_[pending.peer];
  shlo.dcid = pending.client_scid;
  shlo.scid.resize(8);
  rng_.fill(shlo.scid);
  shlo.group_id = static_cast<std::uint16_t>(pending.group);
  sink_.add(Counter::kShlos);
  return SendShlo{std::move(shlo)};
}

std::vector<Completion> ServerEndpoint::drain_low_priority(std::size_t budget) {
  std::vector<Completion> out;
  if (!high_.empty()) return out;
  while (budget > 0 && !low_.empty()) {
    PendingHandshake p = std::move(low_.front());
    low_.pop_front();
    out.push_back({p.peer, complete(p)});
    --budget;
  }
  return out;
}

std::optional<Completion> ServerEndpoint::process_high() {
  if (high_.empty()) return std::nullopt;
  PendingHandshake p = std::move(high_.front());
  high_.pop_front();
  return Completion{p.peer, complete(p)};
}

// ---------------------------------------------------------------------------

void ServerNode::on_datagram(ByteView data, const Address& from, Duration now,
                             Outbox& out) {
  HandshakeMessage msg;
  try {
    msg = decode_message(data);
  } catch (const PacketError&) {
    server_.sink().add(Counter::kMalformed);
    return;
  }
  const auto* init = std::get_if<InitialMessage>(&msg);
  if (init == nullptr) {
    server_.sink().add(Counter::kMalformed);
    return;
  }
  emit(server_.on_initial(*init, from, now), from, out);
}

bool ServerNode::has_background_work() const {
  return server_.high_queue_size() > 0 || server_.low_queue_size() > 0;
}

void ServerNode::do_background_work(Duration, Outbox& out) {
  if (auto c = server_.process_high()) {
    emit(c->action, c->peer, out);
    return;
  }
  for (const Completion& c : server_.drain_low_priority(1)) emit(c.action, c.peer, out);
}

void ServerNode::emit(const Action& action, const Address& to, Outbox& out) {
  CpuScope scope(server_.sink().cpu(), CpuCategory::kSend);
  auto send = [&](HandshakeMessage m) {
    out.send(to, encode_message(m));
    server_.sink().add(Counter::kSent);
  };
  if (const auto* a = std::get_if<SendShlo>(&action)) {
    send(a->msg);
  } else if (const auto* a = std::get_if<SendRetry>(&action)) {
    send(a->packet);
  } else if (const auto* a = std::get_if<SendReject>(&action)) {
    send(a->msg);
    if (a->fresh_retry) send(*a->fresh_retry);
  }
}

}  // namespace qfam
