#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "qfam/error.hpp"

namespace qfam {

enum class HarnessErrc { kIo, kBackend };
using HarnessError = CodedError<HarnessErrc>;

// ---------------------------------------------------------------------------
// CPU accounting

enum class CpuCategory : std::size_t { kSend, kSolve, kKeyExchange, kToken, kOther };
inline constexpr std::size_t kCpuCategories = 5;

const char* to_string(CpuCategory c);

struct CpuTimes {
  std::array<double, kCpuCategories> seconds{};

  double operator[](CpuCategory c) const {
    return seconds[static_cast<std::size_t>(c)];
  }
  double total() const;

  CpuTimes& operator+=(const CpuTimes& o);
  friend CpuTimes operator-(CpuTimes a, const CpuTimes& b);
};

/// CPU time consumed by the calling thread.
std::chrono::nanoseconds thread_cpu_now();

class CpuAccount {
 public:
  void add(CpuCategory c, std::int64_t ns) {
    ns_[static_cast<std::size_t>(c)].fetch_add(ns, std::memory_order_relaxed);
  }
  CpuTimes snapshot() const;

 private:
  std::array<std::atomic<std::int64_t>, kCpuCategories> ns_{};
};

// Charges the calling thread's CPU time to one category. Scopes nest and are
// exclusive: opening a scope pauses the enclosing one, so no interval is
// counted twice.
class CpuScope {
 public:
  CpuScope(CpuAccount& account, CpuCategory category);
  ~CpuScope();
  CpuScope(const CpuScope&) = delete;
  CpuScope& operator=(const CpuScope&) = delete;

  /// Books the time elapsed so far without closing the scope.
  void flush();

 private:
  CpuAccount& account_;
  CpuCategory category_;
  CpuScope* parent_;
  std::int64_t start_;
};

// ---------------------------------------------------------------------------
// Event counters

enum class Counter : std::size_t {
  kSent,               // server: datagrams sent; actors: handshakes started
  kRetries,            // server: retries issued; actors: retries received
  kShlos,              // server: sent; actors: received
  kRejectBadToken,
  kRejectBadChallenge,
  kRejectOverloaded,
  kRejectUnsupportedGroup,
  kAccepted,           // server: token and challenge valid
  kEnqueuedLow,
  kKeyExchanges,       // server: shared secrets computed
  kInvalidKeyShares,
  kMalformed,          // undecodable datagrams
  kSolutions,          // actors: solved tokens sent back
  kTimeouts,           // actors: handshakes abandoned
};
inline constexpr std::size_t kCounterCount = 14;

struct Counts {
  std::array<std::uint64_t, kCounterCount> values{};

  std::uint64_t operator[](Counter c) const {
    return values[static_cast<std::size_t>(c)];
  }
  std::uint64_t rejects() const;

  Counts& operator+=(const Counts& o);
  friend Counts operator-(Counts a, const Counts& b);
  friend bool operator==(const Counts&, const Counts&) = default;
};

// Everything one role accumulated up to some instant, or over an interval
// when produced by delta().
struct RoleSnapshot {
  CpuTimes cpu;
  Counts counts;
  std::vector<double> response_ms;
  std::vector<double> solve_ms;
  std::vector<std::uint64_t> solve_iterations;
};

RoleSnapshot delta(const RoleSnapshot& later, const RoleSnapshot& earlier);
RoleSnapshot& operator+=(RoleSnapshot& acc, const RoleSnapshot& more);

// Thread-safe sink shared by the actor that owns a role and the sampler.
class RoleSink {
 public:
  CpuAccount& cpu() { return cpu_; }

  void add(Counter c, std::uint64_t n = 1) {
    counts_[static_cast<std::size_t>(c)].fetch_add(n, std::memory_order_relaxed);
  }
  std::uint64_t count(Counter c) const {
    return counts_[static_cast<std::size_t>(c)].load(std::memory_order_relaxed);
  }
  void record_response(std::chrono::nanoseconds rt);
  void record_solve(std::chrono::nanoseconds wall, std::uint64_t iterations);

  RoleSnapshot snapshot() const;

 private:
  CpuAccount cpu_;
  std::array<std::atomic<std::uint64_t>, kCounterCount> counts_{};
  mutable std::mutex mu_;
  std::vector<double> response_ms_;
  std::vector<double> solve_ms_;
  std::vector<std::uint64_t> solve_iterations_;
};

std::optional<double> median(std::vector<double> values);
std::optional<double> median(std::vector<std::uint64_t> values);

// ---------------------------------------------------------------------------
// Reports

inline constexpr const char* kRoleServer = "server";
inline constexpr const char* kRoleAttacker = "attacker";
inline constexpr const char* kRoleClient = "client";

/// server CPU / attacker CPU; absent when the attacker used no CPU.
std::optional<double> amplification_factor(double server_cpu_s,
                                           double attacker_cpu_s);

struct SampleRow {
  double timestamp_s = 0;
  std::string phase;
  std::string role;
  CpuTimes cpu;
  Counts counts;
  std::optional<double> median_response_ms;
  std::optional<double> amplification_factor;
};

struct PhaseReport {
  std::string name;
  double start_s = 0;
  double duration_s = 0;
  std::map<std::string, RoleSnapshot> roles;
  /// Server key exchanges computed for datagrams from the attacker's address.
  std::uint64_t attacker_key_exchanges = 0;

  const RoleSnapshot* role(const std::string& name) const;
  std::optional<double> amplification_factor() const;
  /// Events per second of phase time.
  double rate(const std::string& role, Counter c) const;
};

struct MetricsReport {
  std::vector<SampleRow> rows;
  std::vector<PhaseReport> phases;

  const PhaseReport* phase(const std::string& name) const;
  /// Over all phases.
  std::optional<double> amplification_factor() const;
};

inline constexpr const char* kCsvHeader =
    "timestamp_s,phase,role,cpu_send_s,cpu_solve_s,cpu_keyexchange_s,"
    "cpu_token_s,sent,retries,shlos,rejects_badtoken,rejects_badchallenge,"
    "rejects_overloaded,median_response_ms,amplification_factor";

void emit_csv(const MetricsReport& report, std::ostream& out);
/// Errors: HarnessError(kIo).
void emit_csv(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace qfam
