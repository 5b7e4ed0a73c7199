#include "qfam/runtime.hpp"

#include <algorithm>
#include <limits>

#include "qfam/challenge.hpp"
#include "qfam/keyexchange.hpp"
#include "qfam/packet.hpp"
#include "qfam/token.hpp"

namespace qfam {

// ---------------------------------------------------------------------------
// Real time

RealtimeDriver::RealtimeDriver(Node& node, Endpoint& endpoint,
                               std::chrono::steady_clock::time_point epoch,
                               Duration poll_interval)
    : node_(node), endpoint_(endpoint), epoch_(epoch), poll_(poll_interval) {}

RealtimeDriver::~RealtimeDriver() { stop(); }

void RealtimeDriver::start() {
  stop_ = false;
  thread_ = std::thread([this] { run(stop_); });
}

void RealtimeDriver::stop() {
  stop_ = true;
  if (thread_.joinable()) thread_.join();
}

void RealtimeDriver::post(std::function<void(Duration)> fn) {
  std::lock_guard lock(mu_);
  posted_.push_back(std::move(fn));
}

Duration RealtimeDriver::now() const {
  return std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now() - epoch_);
}

void RealtimeDriver::run_posted() {
  std::vector<std::function<void(Duration)>> fns;
  {
    std::lock_guard lock(mu_);
    fns.swap(posted_);
  }
  for (auto& fn : fns) fn(now());
}

void RealtimeDriver::flush(Outbox& out) {
  if (out.size() == 0) return;
  CpuScope scope(node_.sink().cpu(), CpuCategory::kSend);
  for (const Outgoing& o : out.items()) {
    try {
      endpoint_.send(o.to, o.data);
    } catch (const TransportError&) {
      // Dropped, as the network would.
    }
  }
  out.clear();
}

void RealtimeDriver::run(const std::atomic<bool>& stop_flag) {
  constexpr int kMaxBurst = 64;
  CpuScope root(node_.sink().cpu(), CpuCategory::kOther);
  Outbox out;
  while (!stop_flag.load(std::memory_order_relaxed) &&
         !stop_.load(std::memory_order_relaxed)) {
    run_posted();

    if (auto timer = node_.next_timer(); timer && *timer <= now()) {
      node_.on_timer(now(), out);
      flush(out);
    }

    Duration wait = poll_;
    if (node_.has_background_work()) {
      wait = Duration::zero();
    } else if (auto timer = node_.next_timer()) {
      wait = std::clamp(*timer - now(), Duration::zero(), poll_);
    }
    // Drain what has arrived before touching background work; a bounded
    // burst keeps timers and posted commands responsive.
    bool drained = true;
    if (auto d = endpoint_.recv(wait)) {
      node_.on_datagram(d->data, d->from, now(), out);
      flush(out);
      drained = false;
      for (int i = 0; i < kMaxBurst; ++i) {
        auto more = endpoint_.recv(Duration::zero());
        if (!more) {
          drained = true;
          break;
        }
        node_.on_datagram(more->data, more->from, now(), out);
        flush(out);
      }
    }

    if (drained && node_.has_background_work()) {
      node_.do_background_work(now(), out);
      flush(out);
    }
    root.flush();
  }
  run_posted();
}

// ---------------------------------------------------------------------------
// Cost model

Duration CostModel::cost(const WorkCounters& work, std::size_t datagrams) const {
  double ns = step_ns + datagram_ns * static_cast<double>(datagrams) +
              digest_ns * static_cast<double>(work.digests) +
              aead_ns * static_cast<double>(work.aead_ops);
  for (std::size_t i = 0; i < keygen_ns.size(); ++i) {
    ns += keygen_ns[i] * static_cast<double>(work.keygens[i]);
    ns += derive_ns[i] * static_cast<double>(work.derives[i]);
  }
  return Duration(std::max<std::int64_t>(1, static_cast<std::int64_t>(ns)));
}

namespace {

// Best of three: per-call thread CPU of `fn` repeated `n` times.
template <class Fn>
double per_call_ns(int n, Fn&& fn) {
  double best = std::numeric_limits<double>::max();
  for (int round = 0; round < 3; ++round) {
    const auto t0 = thread_cpu_now();
    for (int i = 0; i < n; ++i) fn();
    const auto t1 = thread_cpu_now();
    best = std::min(best, static_cast<double>((t1 - t0).count()) / n);
  }
  return best;
}

double measure_datagram_ns() {
  try {
    UdpEndpoint a(loopback4(0));
    UdpEndpoint b(loopback4(0));
    const Bytes payload(150, 0x42);
    constexpr int kCount = 2000;
    double best = std::numeric_limits<double>::max();
    for (int round = 0; round < 3; ++round) {
      const auto t0 = thread_cpu_now();
      for (int i = 0; i < kCount; ++i) a.send(b.local_address(), payload);
      int received = 0;
      while (received < kCount && b.recv(std::chrono::milliseconds(50))) ++received;
      const auto t1 = thread_cpu_now();
      if (received == 0) continue;
      best = std::min(best, static_cast<double>((t1 - t0).count()) /
                                (kCount + received));
    }
    if (best != std::numeric_limits<double>::max()) return best;
  } catch (const TransportError&) {
  }
  return CostModel{}.datagram_ns;
}

}  // namespace

CostModel CostModel::measure() {
  CostModel m;

  ChallengeInstance inst;
  std::uint32_t r = 0;
  m.digest_ns = per_call_ns(20000, [&] {
    (void)challenge_digest(inst, Mrn(r));
    r = (r + 1) & Mrn::kMax;
  });

  TokenKey key;
  key.key.fill(7);
  const TokenKeyStore store(KeySequence(0), key);
  TokenHeader header;
  header.tin = 42;
  header.cci = Cci(12);
  TokenBody body;
  body.expiry = ~std::uint64_t{0};
  body.odcid.assign(8, 1);
  body.source_port = 443;
  const Bytes rscid(8, 2);
  const AssociatedData ad = make_associated_data(ipv4_mapped(127, 0, 0, 1), header, rscid);
  m.aead_ns = per_call_ns(2000, [&] {
    const RetryToken t = seal_token(store, header, body, ad);
    (void)open_token(store, t, ad, 0);
  }) / 2;

  for (GroupId g : kAllGroups) {
    const std::size_t i = group_index(g);
    const int n = g == GroupId::kSecp384r1 ? 20 : 100;
    const KeyShare peer = generate_keyshare(g);
    m.keygen_ns[i] = per_call_ns(n, [&] { (void)generate_keyshare(g); });
    m.derive_ns[i] = per_call_ns(n, [&] {
      (void)compute_shared(g, peer.private_key, peer.public_share);
    });
  }

  InitialMessage init;
  init.dcid.assign(8, 1);
  init.scid.assign(8, 2);
  init.token.assign(60, 3);
  init.group_id = static_cast<std::uint16_t>(GroupId::kSecp384r1);
  init.key_share.assign(97, 4);
  m.step_ns = per_call_ns(5000, [&] { (void)decode_message(encode_message(init)); });

  m.datagram_ns = measure_datagram_ns();
  return m;
}

const CostModel& CostModel::calibrated() {
  static const CostModel model = measure();
  return model;
}

// ---------------------------------------------------------------------------
// Simulation

namespace {
constexpr Duration kNever = Duration::max();
}

Simulation::Simulation(SimOptions options)
    : options_(std::move(options)), rng_(options_.network.seed, 0x73696d) {}

void Simulation::add(Node& node, const Address& address) {
  auto slot = std::make_unique<Slot>();
  slot->node = &node;
  slot->address = address;
  by_address_[address] = slot.get();
  slots_.push_back(std::move(slot));
}

void Simulation::at(Duration t, std::function<void()> fn) {
  callbacks_.emplace(std::make_pair(t, seq_++), std::move(fn));
}

Duration Simulation::busy_time(const Node& node) const {
  for (const auto& s : slots_) {
    if (s->node == &node) return s->busy_total;
  }
  return Duration::zero();
}

Duration Simulation::ready_time(const Slot& s) const {
  Duration c = kNever;
  if (!s.inbox.empty()) c = std::min(c, s.inbox.top().arrival);
  if (auto t = s.node->next_timer()) c = std::min(c, *t);
  if (s.node->has_background_work()) c = std::min(c, now_);
  if (c == kNever) return kNever;
  return std::max({c, s.busy_until, now_});
}

void Simulation::run_until(Duration end) {
  while (true) {
    Slot* best = nullptr;
    Duration best_t = kNever;
    for (const auto& s : slots_) {
      const Duration r = ready_time(*s);
      if (r < best_t) {
        best_t = r;
        best = s.get();
      }
    }
    if (!callbacks_.empty()) {
      const Duration cb_t = callbacks_.begin()->first.first;
      if (cb_t <= best_t && cb_t <= end) {
        auto node = callbacks_.extract(callbacks_.begin());
        now_ = std::max(now_, cb_t);
        node.mapped()();
        continue;
      }
    }
    if (best == nullptr || best_t >= end) break;
    step(*best, best_t);
  }
  now_ = std::max(now_, end);
}

void Simulation::step(Slot& s, Duration t) {
  now_ = t;
  const bool available[3] = {
      !s.inbox.empty() && s.inbox.top().arrival <= t,
      [&] {
        auto timer = s.node->next_timer();
        return timer && *timer <= t;
      }(),
      s.node->has_background_work(),
  };
  // Datagrams and timers alternate; background work runs only when neither
  // is pending, so a deep work queue never delays the receive path.
  int kind = -1;
  for (int i = 1; i <= 2; ++i) {
    const int k = (s.last_kind + i) % 2;
    if (available[k]) {
      kind = k;
      break;
    }
  }
  if (kind < 0 && available[2]) kind = 2;
  if (kind < 0) {
    s.busy_until = t + Duration(1);
    return;
  }
  if (kind < 2) s.last_kind = kind;

  Outbox out;
  std::size_t datagrams = 0;
  const WorkCounters before = thread_work();
  {
    CpuScope scope(s.node->sink().cpu(), CpuCategory::kOther);
    switch (kind) {
      case 0: {
        Pending p = std::move(const_cast<Pending&>(s.inbox.top()));
        s.inbox.pop();
        datagrams = 1;
        s.node->on_datagram(p.data, p.from, t, out);
        break;
      }
      case 1:
        s.node->on_timer(t, out);
        break;
      default:
        s.node->do_background_work(t, out);
        break;
    }
  }
  const Duration cost = options_.cost.cost(thread_work() - before, datagrams + out.size());
  s.busy_until = t + cost;
  s.busy_total += cost;
  deliver(s, out, s.busy_until);
}

void Simulation::deliver(const Slot& from, Outbox& out, Duration depart) {
  const InprocOptions& net = options_.network;
  for (Outgoing& o : out.items()) {
    if (net.loss > 0 && rng_.uniform() < net.loss) {
      ++dropped_;
      continue;
    }
    auto it = by_address_.find(o.to);
    if (it == by_address_.end() || it->second->inbox.size() >= net.queue_capacity) {
      ++dropped_;
      continue;
    }
    it->second->inbox.push(
        Pending{depart + net.latency, seq_++, from.address, std::move(o.data)});
  }
}

}  // namespace qfam
