#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qfam/client.hpp"
#include "qfam/metrics.hpp"
#include "qfam/runtime.hpp"
#include "qfam/server.hpp"
#include "qfam/transport.hpp"

namespace qfam {

enum class ScenarioKind {
  kRateSweep,      // attacker rate varies, server policy fixed
  kComplexityCpu,  // cci varies at a fixed attack rate
  kRateReduction,  // cci varies against a max-rate solving attacker
  kTimeline,       // continuous run through explicit phases
  kSolveTime,      // attacker rate varies at a fixed cci; solve times recorded
  kResponseTime,   // cci x attack rate grid with a legitimate client
};
const char* to_string(ScenarioKind kind);
std::optional<ScenarioKind> scenario_kind_from_name(std::string_view name);

enum class Backend {
  kInproc,  // deterministic virtual-time simulation
  kUdp,     // real sockets on loopback, one thread per actor
};

struct AttackRate {
  double rate = 0;  // 0 with max == false: no attacker
  bool max = false;

  std::string label() const;
  friend bool operator==(const AttackRate&, const AttackRate&) = default;
};

struct PhaseSpec {
  std::string name;
  double duration_s = 0;
  AttackRate attack;
  MitigationMode mode = MitigationMode::kOff;
  std::optional<Cci> cci;
  bool client_active = true;
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::kRateSweep;
  Backend backend = Backend::kInproc;
  std::uint64_t seed = 1;
  double phase_duration_s = 30;
  double sample_interval_s = 1;
  std::vector<AttackRate> attack_rates;
  std::vector<unsigned> cci_values;
  /// Fresh server and actors per phase; timeline runs are continuous.
  bool isolate_phases = true;

  MitigationPolicy server;
  bool defer_key_exchange = true;
  std::string server_bind = "127.0.0.1:0";  // udp backend

  ClientConfig attacker = ClientConfig::attacker();
  std::size_t attacker_window = 64;
  /// Legitimate client; its request_rate paces it (0: one handshake per phase).
  std::optional<ClientConfig> client;

  InprocOptions network{0, std::chrono::microseconds(100), 1, 4096};
  /// Absent: measured on this machine once per process.
  std::optional<CostModel> cost_model;

  /// Explicit phases; generated from the kind when empty.
  std::vector<PhaseSpec> phases;
  std::string output;

  /// Defaults for `kind`, as used when a JSON field is absent.
  static ScenarioConfig defaults(ScenarioKind kind);
  /// Errors: ConfigError(kParse, kMissingField, kInvalidValue).
  static ScenarioConfig from_json(std::string_view text);
  /// Errors: as from_json, plus ConfigError(kIo).
  static ScenarioConfig load(const std::filesystem::path& path);

  /// Errors: ConfigError(kInvalidValue).
  void validate() const;
};

/// The phases a run will execute, in order.
std::vector<PhaseSpec> plan_phases(const ScenarioConfig& config);

/// Errors: ConfigError, HarnessError(kBackend).
MetricsReport run_scenario(const ScenarioConfig& config);

}  // namespace qfam
