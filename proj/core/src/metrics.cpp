#include "qfam/metrics.hpp"

#include <time.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

namespace qfam {

const char* to_string(CpuCategory c) {
  switch (c) {
    case CpuCategory::kSend: return "send";
    case CpuCategory::kSolve: return "solve";
    case CpuCategory::kKeyExchange: return "keyexchange";
    case CpuCategory::kToken: return "token";
    case CpuCategory::kOther: return "other";
  }
  return "unknown";
}

double CpuTimes::total() const {
  return std::accumulate(seconds.begin(), seconds.end(), 0.0);
}

CpuTimes& CpuTimes::operator+=(const CpuTimes& o) {
  for (std::size_t i = 0; i < kCpuCategories; ++i) seconds[i] += o.seconds[i];
  return *this;
}

CpuTimes operator-(CpuTimes a, const CpuTimes& b) {
  for (std::size_t i = 0; i < kCpuCategories; ++i) a.seconds[i] -= b.seconds[i];
  return a;
}

std::chrono::nanoseconds thread_cpu_now() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return std::chrono::seconds(ts.tv_sec) + std::chrono::nanoseconds(ts.tv_nsec);
}

CpuTimes CpuAccount::snapshot() const {
  CpuTimes t;
  for (std::size_t i = 0; i < kCpuCategories; ++i) {
    t.seconds[i] = static_cast<double>(ns_[i].load(std::memory_order_relaxed)) * 1e-9;
  }
  return t;
}

namespace {
thread_local CpuScope* t_current_scope = nullptr;
}

CpuScope::CpuScope(CpuAccount& account, CpuCategory category)
    : account_(account), category_(category), parent_(t_current_scope) {
  start_ = thread_cpu_now().count();
  if (parent_ != nullptr) {
    parent_->account_.add(parent_->category_, start_ - parent_->start_);
  }
  t_current_scope = this;
}

CpuScope::~CpuScope() {
  const std::int64_t now = thread_cpu_now().count();
  account_.add(category_, now - start_);
  t_current_scope = parent_;
  if (parent_ != nullptr) parent_->start_ = now;
}

void CpuScope::flush() {
  const std::int64_t now = thread_cpu_now().count();
  account_.add(category_, now - start_);
  start_ = now;
}

std::uint64_t Counts::rejects() const {
  return (*this)[Counter::kRejectBadToken] + (*this)[Counter::kRejectBadChallenge] +
         (*this)[Counter::kRejectOverloaded] +
         (*this)[Counter::kRejectUnsupportedGroup];
}

Counts& Counts::operator+=(const Counts& o) {
  for (std::size_t i = 0; i < kCounterCount; ++i) values[i] += o.values[i];
  return *this;
}

Counts operator-(Counts a, const Counts& b) {
  for (std::size_t i = 0; i < kCounterCount; ++i) a.values[i] -= b.values[i];
  return a;
}

namespace {

template <class T>
std::vector<T> tail(const std::vector<T>& v, std::size_t from) {
  if (from >= v.size()) return {};
  return {v.begin() + static_cast<std::ptrdiff_t>(from), v.end()};
}

template <class T>
void append(std::vector<T>& a, const std::vector<T>& b) {
  a.insert(a.end(), b.begin(), b.end());
}

}  // namespace

RoleSnapshot delta(const RoleSnapshot& later, const RoleSnapshot& earlier) {
  RoleSnapshot d;
  d.cpu = later.cpu - earlier.cpu;
  d.counts = later.counts - earlier.counts;
  d.response_ms = tail(later.response_ms, earlier.response_ms.size());
  d.solve_ms = tail(later.solve_ms, earlier.solve_ms.size());
  d.solve_iterations = tail(later.solve_iterations, earlier.solve_iterations.size());
  return d;
}

RoleSnapshot& operator+=(RoleSnapshot& acc, const RoleSnapshot& more) {
  acc.cpu += more.cpu;
  acc.counts += more.counts;
  append(acc.response_ms, more.response_ms);
  append(acc.solve_ms, more.solve_ms);
  append(acc.solve_iterations, more.solve_iterations);
  return acc;
}

void RoleSink::record_response(std::chrono::nanoseconds rt) {
  std::lock_guard lock(mu_);
  response_ms_.push_back(static_cast<double>(rt.count()) * 1e-6);
}

void RoleSink::record_solve(std::chrono::nanoseconds wall, std::uint64_t iterations) {
  std::lock_guard lock(mu_);
  solve_ms_.push_back(static_cast<double>(wall.count()) * 1e-6);
  solve_iterations_.push_back(iterations);
}

RoleSnapshot RoleSink::snapshot() const {
  RoleSnapshot s;
  s.cpu = cpu_.snapshot();
  for (std::size_t i = 0; i < kCounterCount; ++i) {
    s.counts.values[i] = counts_[i].load(std::memory_order_relaxed);
  }
  std::lock_guard lock(mu_);
  s.response_ms = response_ms_;
  s.solve_ms = solve_ms_;
  s.solve_iterations = solve_iterations_;
  return s;
}

std::optional<double> median(std::vector<double> values) {
  if (values.empty()) return std::nullopt;
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid),
                   values.end());
  const double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  const double lo =
      *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return (lo + hi) / 2;
}

std::optional<double> median(std::vector<std::uint64_t> values) {
  return median(std::vector<double>(values.begin(), values.end()));
}

std::optional<double> amplification_factor(double server_cpu_s, double attacker_cpu_s) {
  if (attacker_cpu_s <= 0) return std::nullopt;
  return server_cpu_s / attacker_cpu_s;
}

const RoleSnapshot* PhaseReport::role(const std::string& name) const {
  auto it = roles.find(name);
  return it == roles.end() ? nullptr : &it->second;
}

std::optional<double> PhaseReport::amplification_factor() const {
  const RoleSnapshot* server = role(kRoleServer);
  const RoleSnapshot* attacker = role(kRoleAttacker);
  if (server == nullptr || attacker == nullptr) return std::nullopt;
  return qfam::amplification_factor(server->cpu.total(), attacker->cpu.total());
}

double PhaseReport::rate(const std::string& name, Counter c) const {
  const RoleSnapshot* r = role(name);
  if (r == nullptr || duration_s <= 0) return 0;
  return static_cast<double>(r->counts[c]) / duration_s;
}

const PhaseReport* MetricsReport::phase(const std::string& name) const {
  for (const auto& p : phases) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::optional<double> MetricsReport::amplification_factor() const {
  double server = 0;
  double attacker = 0;
  for (const auto& p : phases) {
    if (const auto* s = p.role(kRoleServer)) server += s->cpu.total();
    if (const auto* a = p.role(kRoleAttacker)) attacker += a->cpu.total();
  }
  return qfam::amplification_factor(server, attacker);
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

void emit_csv(const MetricsReport& report, std::ostream& out) {
  out << kCsvHeader << '\n';
  for (const SampleRow& r : report.rows) {
    out << fixed(r.timestamp_s, 3) << ',' << r.phase << ',' << r.role << ','
        << fixed(r.cpu[CpuCategory::kSend], 6) << ','
        << fixed(r.cpu[CpuCategory::kSolve], 6) << ','
        << fixed(r.cpu[CpuCategory::kKeyExchange], 6) << ','
        << fixed(r.cpu[CpuCategory::kToken], 6) << ','
        << r.counts[Counter::kSent] << ',' << r.counts[Counter::kRetries] << ','
        << r.counts[Counter::kShlos] << ',' << r.counts[Counter::kRejectBadToken]
        << ',' << r.counts[Counter::kRejectBadChallenge] << ','
        << r.counts[Counter::kRejectOverloaded] << ',';
    if (r.median_response_ms) out << fixed(*r.median_response_ms, 3);
    out << ',';
    if (r.amplification_factor) out << fixed(*r.amplification_factor, 4);
    out << '\n';
  }
}

void emit_csv(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw HarnessError(HarnessErrc::kIo, "cannot open " + path.string());
  emit_csv(report, out);
  out.flush();
  if (!out) throw HarnessError(HarnessErrc::kIo, "write failed: " + path.string());
}

}  // namespace qfam
