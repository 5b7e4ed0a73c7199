#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <thread>
#include <vector>

#include "qfam/metrics.hpp"
#include "qfam/random.hpp"
#include "qfam/transport.hpp"
#include "qfam/work.hpp"

namespace qfam {

using Duration = std::chrono::nanoseconds;

struct Outgoing {
  Address to;
  Bytes data;
};

class Outbox {
 public:
  void send(const Address& to, Bytes data) { items_.push_back({to, std::move(data)}); }

  std::vector<Outgoing>& items() { return items_; }
  std::size_t size() const { return items_.size(); }
  void clear() { items_.clear(); }

 private:
  std::vector<Outgoing> items_;
};

// An actor driven by either the real-time driver or the simulator. All calls
// happen on one thread; `now` is time since the run's epoch.
class Node {
 public:
  virtual ~Node() = default;

  virtual void on_datagram(ByteView data, const Address& from, Duration now,
                           Outbox& out) = 0;

  /// Absolute time of the next timer, if any.
  virtual std::optional<Duration> next_timer() const { return std::nullopt; }
  virtual void on_timer(Duration now, Outbox& out) {
    (void)now;
    (void)out;
  }

  /// Deferred work, one unit at a time, run only when no datagram or timer
  /// is pending.
  virtual bool has_background_work() const { return false; }
  virtual void do_background_work(Duration now, Outbox& out) {
    (void)now;
    (void)out;
  }

  virtual RoleSink& sink() = 0;
};

// Runs a node against a real endpoint on a dedicated thread. The thread's CPU
// time is charged to the node's sink, "other" unless a handler says otherwise.
class RealtimeDriver {
 public:
  RealtimeDriver(Node& node, Endpoint& endpoint,
                 std::chrono::steady_clock::time_point epoch,
                 Duration poll_interval = std::chrono::milliseconds(10));
  ~RealtimeDriver();
  RealtimeDriver(const RealtimeDriver&) = delete;
  RealtimeDriver& operator=(const RealtimeDriver&) = delete;

  void start();
  /// Idempotent; joins the thread.
  void stop();
  /// Runs the loop on the calling thread until `stop_flag` is set.
  void run(const std::atomic<bool>& stop_flag);

  /// Queues `fn` to run on the node's thread between events.
  void post(std::function<void(Duration now)> fn);

  Duration now() const;

 private:
  void flush(Outbox& out);
  void run_posted();

  Node& node_;
  Endpoint& endpoint_;
  std::chrono::steady_clock::time_point epoch_;
  Duration poll_;
  std::atomic<bool> stop_{false};
  std::thread thread_;
  std::mutex mu_;
  std::vector<std::function<void(Duration)>> posted_;
};

// Per-operation virtual CPU prices for the simulator, in nanoseconds.
struct CostModel {
  double step_ns = 500;       // fixed overhead of one handler call
  double datagram_ns = 2000;  // per datagram received or sent
  double digest_ns = 100;
  double aead_ns = 1000;
  std::array<double, 3> keygen_ns{50'000, 30'000, 700'000};  // by group_index
  std::array<double, 3> derive_ns{50'000, 120'000, 1'100'000};

  Duration cost(const WorkCounters& work, std::size_t datagrams) const;

  /// Measures every price on this machine.
  static CostModel measure();
  /// measure() once per process; later calls return the same model so
  /// repeated runs in one process are comparable.
  static const CostModel& calibrated();
};

struct SimOptions {
  InprocOptions network;
  CostModel cost;
};

// Deterministic discrete-event simulation. Each node owns a virtual CPU:
// a handler started at time t occupies it until t + cost(work done), and its
// outgoing datagrams leave at that instant. Handlers really execute, so
// protocol behavior and measured thread CPU are genuine; only the clock is
// virtual. Given the same seed and cost model, every run takes the same
// sequence of steps.
class Simulation {
 public:
  explicit Simulation(SimOptions options);

  void add(Node& node, const Address& address);
  /// Runs `fn` at virtual time `t`, before any node step at the same time.
  void at(Duration t, std::function<void()> fn);
  void run_until(Duration end);

  Duration now() const { return now_; }
  std::uint64_t dropped() const { return dropped_; }
  /// Virtual time the node's CPU has been busy.
  Duration busy_time(const Node& node) const;

 private:
  struct Pending {
    Duration arrival;
    std::uint64_t seq;
    Address from;
    Bytes data;
    bool operator>(const Pending& o) const {
      return arrival != o.arrival ? arrival > o.arrival : seq > o.seq;
    }
  };
  struct Slot {
    Node* node;
    Address address;
    Duration busy_until{0};
    Duration busy_total{0};
    int last_kind = 1;
    std::priority_queue<Pending, std::vector<Pending>, std::greater<>> inbox;
  };

  Duration ready_time(const Slot& s) const;
  void step(Slot& s, Duration t);
  void deliver(const Slot& from, Outbox& out, Duration depart);

  SimOptions options_;
  DeterministicRandom rng_;
  std::vector<std::unique_ptr<Slot>> slots_;
  std::map<Address, Slot*> by_address_;
  std::multimap<std::pair<Duration, std::uint64_t>, std::function<void()>> callbacks_;
  Duration now_{0};
  std::uint64_t seq_ = 0;
  std::uint64_t dropped_ = 0;
};

}  // namespace qfam
