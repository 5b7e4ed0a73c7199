#include "qfam/scenario.hpp"

#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace qfam {

using nlohmann::json;

const char* to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kRateSweep: return "rate_sweep";
    case ScenarioKind::kComplexityCpu: return "complexity_cpu";
    case ScenarioKind::kRateReduction: return "rate_reduction";
    case ScenarioKind::kTimeline: return "timeline";
    case ScenarioKind::kSolveTime: return "solve_time";
    case ScenarioKind::kResponseTime: return "response_time";
  }
  return "unknown";
}

std::optional<ScenarioKind> scenario_kind_from_name(std::string_view name) {
  for (auto k : {ScenarioKind::kRateSweep, ScenarioKind::kComplexityCpu,
                 ScenarioKind::kRateReduction, ScenarioKind::kTimeline,
                 ScenarioKind::kSolveTime, ScenarioKind::kResponseTime}) {
    if (name == to_string(k)) return k;
  }
  return std::nullopt;
}

std::string AttackRate::label() const {
  if (max) return "max";
  if (rate <= 0) return "none";
  std::ostringstream out;
  out << rate;
  return out.str();
}

namespace {

[[noreturn]] void invalid(const std::string& what) {
  throw ConfigError(ConfigErrc::kInvalidValue, what);
}

std::vector<AttackRate> rates(std::initializer_list<double> rs) {
  std::vector<AttackRate> out;
  for (double r : rs) out.push_back({r, false});
  return out;
}

}  // namespace

ScenarioConfig ScenarioConfig::defaults(ScenarioKind kind) {
  ScenarioConfig c;
  c.kind = kind;
  c.attacker.solve_challenges = kind != ScenarioKind::kRateSweep;
  c.isolate_phases = kind != ScenarioKind::kTimeline;
  switch (kind) {
    case ScenarioKind::kRateSweep:
      c.attack_rates = rates({20, 40, 80});
      c.cci_values = {12};
      break;
    case ScenarioKind::kComplexityCpu:
      c.attack_rates = rates({40});
      c.cci_values = {0, 4, 8, 10, 12, 14};
      break;
    case ScenarioKind::kRateReduction:
      c.attack_rates = {AttackRate{0, true}};
      c.cci_values = {8, 10, 12, 14};
      break;
    case ScenarioKind::kTimeline:
      c.attack_rates = rates({20, 40, 40, 20});
      c.cci_values = {12};
      break;
    case ScenarioKind::kSolveTime:
      c.attack_rates = rates({20, 40, 80});
      c.cci_values = {10};
      break;
    case ScenarioKind::kResponseTime:
      c.attack_rates = {AttackRate{0, false}, {40, false}, {80, false}, {120, false}};
      c.cci_values = {0, 8, 12, 14};
      c.client = ClientConfig::legitimate();
      c.client->request_rate = 2;
      break;
  }
  return c;
}

void ScenarioConfig::validate() const {
  if (!(phase_duration_s > 0)) invalid("phase_duration_s must be positive");
  if (!(sample_interval_s > 0)) invalid("sample_interval_s must be positive");
  if (phases.empty()) {
    if (attack_rates.empty()) invalid("attack_rates must not be empty");
    if (cci_values.empty()) invalid("cci_values must not be empty");
  }
  for (const AttackRate& r : attack_rates) {
    if (!(r.rate >= 0) || !std::isfinite(r.rate)) invalid("attack rates must be >= 0");
  }
  for (unsigned c : cci_values) {
    if (c > Cci::kMax) invalid("cci values must be 0..15");
  }
  for (const PhaseSpec& p : phases) {
    if (!(p.duration_s > 0)) invalid("phase " + p.name + ": duration must be positive");
    if (!(p.attack.rate >= 0)) invalid("phase " + p.name + ": attack rate must be >= 0");
  }
  if (attacker_window == 0) invalid("attacker window must be positive");
  if (network.loss < 0 || network.loss > 1) invalid("network loss must be in [0, 1]");
  server.validate();
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <class T>
T get(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    invalid(std::string(key) + ": wrong type");
  }
}

AttackRate parse_rate(const json& v) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "max") return {0, true};
    if (s == "none") return {0, false};
    invalid("attack rate must be a number, \"max\" or \"none\"");
  }
  if (!v.is_number()) invalid("attack rate must be a number, \"max\" or \"none\"");
  return {v.get<double>(), false};
}

GroupId parse_group(const json& j, GroupId fallback) {
  const auto name = get<std::string>(j, "group", std::string(group_name(fallback)));
  auto g = group_from_name(name);
  if (!g) invalid("unknown group " + name);
  return *g;
}

ClientConfig parse_actor(const json& j, ClientConfig c) {
  if (!j.is_object()) invalid("actor profile must be an object");
  c.group = parse_group(j, c.group);
  const auto mode = get<std::string>(j, "key_share_mode", to_string(c.key_share_mode));
  auto m = key_share_mode_from_name(mode);
  if (!m) invalid("unknown key_share_mode " + mode);
  c.key_share_mode = *m;
  c.solve_challenges = get<bool>(j, "solve", c.solve_challenges);
  c.qfam_capable = get<bool>(j, "qfam_capable", c.qfam_capable);
  c.request_rate = get<double>(j, "rate", c.request_rate);
  return c;
}

void parse_server(const json& j, ScenarioConfig& c) {
  if (!j.is_object()) invalid("server must be an object");
  MitigationPolicy& p = c.server;
  const auto mode = get<std::string>(j, "mode", to_string(p.mode));
  auto m = mitigation_mode_from_name(mode);
  if (!m) invalid("unknown mitigation mode " + mode);
  p.mode = *m;
  if (j.contains("cci")) {
    const json& v = j.at("cci");
    if (v.is_string() && v.get<std::string>() == "table") {
      p.pinned_cci.reset();
    } else if (v.is_number_unsigned() && v.get<unsigned>() <= Cci::kMax) {
      p.pinned_cci = Cci(v.get<unsigned>());
    } else {
      invalid("server.cci must be 0..15 or \"table\"");
    }
  }
  if (j.contains("thresholds")) {
    p.thresholds.clear();
    for (const json& t : j.at("thresholds")) {
      if (!t.is_array() || t.size() != 2 || !t[0].is_number() || !t[1].is_number_unsigned() ||
          t[1].get<unsigned>() > Cci::kMax) {
        invalid("thresholds must be [rate, cci] pairs");
      }
      p.thresholds.push_back({t[0].get<double>(), Cci(t[1].get<unsigned>())});
    }
  }
  p.ewma_half_life_s = get<double>(j, "ewma_half_life_s", p.ewma_half_life_s);
  p.token_lifetime_s = get<std::uint64_t>(j, "token_lifetime_s", p.token_lifetime_s);
  p.high_queue_capacity = get<std::size_t>(j, "high_queue_capacity", p.high_queue_capacity);
  p.low_queue_capacity = get<std::size_t>(j, "low_queue_capacity", p.low_queue_capacity);
  p.reject_unsolved = get<bool>(j, "reject_unsolved", p.reject_unsolved);
  c.defer_key_exchange = get<bool>(j, "defer_key_exchange", c.defer_key_exchange);
  c.server_bind = get<std::string>(j, "bind", c.server_bind);
}

CostModel parse_cost_model(const json& j) {
  CostModel m;
  m.step_ns = get<double>(j, "step_ns", m.step_ns);
  m.datagram_ns = get<double>(j, "datagram_ns", m.datagram_ns);
  m.digest_ns = get<double>(j, "digest_ns", m.digest_ns);
  m.aead_ns = get<double>(j, "aead_ns", m.aead_ns);
  for (const char* field : {"keygen_ns", "derive_ns"}) {
    if (!j.contains(field)) continue;
    auto& target = std::string_view(field) == "keygen_ns" ? m.keygen_ns : m.derive_ns;
    for (const auto& [name, v] : j.at(field).items()) {
      auto g = group_from_name(name);
      if (!g || !v.is_number()) invalid(std::string(field) + ": bad entry " + name);
      target[group_index(*g)] = v.get<double>();
    }
  }
  return m;
}

PhaseSpec parse_phase(const json& j, double default_duration, std::size_t index) {
  if (!j.is_object()) invalid("phases must be objects");
  PhaseSpec p;
  p.name = get<std::string>(j, "name", "phase" + std::to_string(index + 1));
  p.duration_s = get<double>(j, "duration_s", default_duration);
  p.attack = j.contains("attack_rate") ? parse_rate(j.at("attack_rate")) : AttackRate{};
  const auto mode = get<std::string>(j, "mode", "off");
  auto m = mitigation_mode_from_name(mode);
  if (!m) invalid("phase " + p.name + ": unknown mode " + mode);
  p.mode = *m;
  if (j.contains("cci")) {
    const json& v = j.at("cci");
    if (!v.is_number_unsigned() || v.get<unsigned>() > Cci::kMax) {
      invalid("phase " + p.name + ": cci must be 0..15");
    }
    p.cci = Cci(v.get<unsigned>());
  }
  p.client_active = get<bool>(j, "client", true);
  return p;
}

}  // namespace

ScenarioConfig ScenarioConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(ConfigErrc::kParse, e.what());
  }
  if (!j.is_object()) throw ConfigError(ConfigErrc::kParse, "config must be a JSON object");
  if (!j.contains("kind")) throw ConfigError(ConfigErrc::kMissingField, "missing field: kind");
  const auto kind_name = get<std::string>(j, "kind", "");
  auto kind = scenario_kind_from_name(kind_name);
  if (!kind) invalid("unknown scenario kind " + kind_name);

  ScenarioConfig c = defaults(*kind);
  const auto backend = get<std::string>(j, "backend", "inproc");
  if (backend == "inproc") {
    c.backend = Backend::kInproc;
  } else if (backend == "udp") {
    c.backend = Backend::kUdp;
  } else {
    invalid("backend must be inproc or udp");
  }
  c.seed = get<std::uint64_t>(j, "seed", c.seed);
  c.phase_duration_s = get<double>(j, "phase_duration_s", c.phase_duration_s);
  c.sample_interval_s = get<double>(j, "sample_interval_s", c.sample_interval_s);
  c.isolate_phases = get<bool>(j, "isolate_phases", c.isolate_phases);
  c.output = get<std::string>(j, "output", c.output);

  if (j.contains("attack_rates")) {
    if (!j.at("attack_rates").is_array()) invalid("attack_rates must be a list");
    c.attack_rates.clear();
    for (const json& v : j.at("attack_rates")) c.attack_rates.push_back(parse_rate(v));
  }
  if (j.contains("cci_values")) {
    if (!j.at("cci_values").is_array()) invalid("cci_values must be a list");
    c.cci_values.clear();
    for (const json& v : j.at("cci_values")) {
      if (!v.is_number_unsigned()) invalid("cci values must be 0..15");
      c.cci_values.push_back(v.get<unsigned>());
    }
  }
  if (j.contains("server")) parse_server(j.at("server"), c);
  if (j.contains("attacker")) {
    c.attacker = parse_actor(j.at("attacker"), c.attacker);
    c.attacker_window = get<std::size_t>(j.at("attacker"), "window", c.attacker_window);
  }
  if (j.contains("client")) {
    const json& cj = j.at("client");
    if (get<bool>(cj, "enabled", true)) {
      ClientConfig base = c.client.value_or(ClientConfig::legitimate());
      c.client = parse_actor(cj, base);
    } else {
      c.client.reset();
    }
  }
  if (j.contains("network")) {
    const json& n = j.at("network");
    c.network.loss = get<double>(n, "loss", c.network.loss);
    c.network.latency = std::chrono::duration_cast<Duration>(std::chrono::duration<double, std::milli>(
        get<double>(n, "latency_ms",
                    std::chrono::duration<double, std::milli>(c.network.latency).count())));
    c.network.queue_capacity = get<std::size_t>(n, "queue_capacity", c.network.queue_capacity);
  }
  c.network.seed = c.seed;
  if (j.contains("cost_model")) {
    const json& m = j.at("cost_model");
    if (m.is_string() && m.get<std::string>() == "calibrate") {
      c.cost_model.reset();
    } else if (m.is_object()) {
      c.cost_model = parse_cost_model(m);
    } else {
      invalid("cost_model must be \"calibrate\" or an object");
    }
  }
  if (j.contains("phases")) {
    std::size_t i = 0;
    for (const json& p : j.at("phases")) {
      c.phases.push_back(parse_phase(p, c.phase_duration_s, i++));
    }
  }
  c.validate();
  return c;
}

ScenarioConfig ScenarioConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(ConfigErrc::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

// ---------------------------------------------------------------------------
// Phases

std::vector<PhaseSpec> plan_phases(const ScenarioConfig& c) {
  if (!c.phases.empty()) return c.phases;

  std::vector<PhaseSpec> out;
  auto phase = [&](std::string name, AttackRate rate, MitigationMode mode,
                   std::optional<Cci> cci) {
    out.push_back({std::move(name), c.phase_duration_s, rate, mode, cci, true});
  };
  const Cci first_cci(c.cci_values.front());
  const AttackRate first_rate = c.attack_rates.front();

  switch (c.kind) {
    case ScenarioKind::kRateSweep:
      for (const AttackRate& r : c.attack_rates) {
        phase("rate_" + r.label(), r, c.server.mode, first_cci);
      }
      break;
    case ScenarioKind::kComplexityCpu:
    case ScenarioKind::kRateReduction:
      for (unsigned v : c.cci_values) {
        phase("cci_" + std::to_string(v), first_rate, MitigationMode::kOn, Cci(v));
      }
      break;
    case ScenarioKind::kSolveTime:
      for (const AttackRate& r : c.attack_rates) {
        phase("rate_" + r.label(), r, MitigationMode::kOn, first_cci);
      }
      break;
    case ScenarioKind::kResponseTime:
      for (unsigned v : c.cci_values) {
        for (const AttackRate& r : c.attack_rates) {
          phase("cci_" + std::to_string(v) + "_rate_" + r.label(), r, MitigationMode::kOn,
                Cci(v));
        }
      }
      break;
    case ScenarioKind::kTimeline: {
      // Two phases without mitigation, then the same rates with it.
      const std::size_t n = c.attack_rates.size();
      for (std::size_t i = 0; i < n; ++i) {
        const bool on = i >= n / 2;
        phase("phase" + std::to_string(i + 1) + (on ? "_on" : "_off"), c.attack_rates[i],
              on ? MitigationMode::kOn : MitigationMode::kOff,
              on ? std::optional<Cci>(first_cci) : std::nullopt);
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Worlds

namespace {

constexpr std::uint64_t kSimUnixBase = 1'700'000'000;

Duration seconds(double s) {
  return std::chrono::duration_cast<Duration>(std::chrono::duration<double>(s));
}

MitigationPolicy phase_policy(const ScenarioConfig& c, const PhaseSpec& p) {
  MitigationPolicy policy = c.server;
  policy.mode = p.mode;
  if (p.cci) policy.pinned_cci = p.cci;
  return policy;
}

ClientConfig attacker_config(const ScenarioConfig& c, const PhaseSpec& p) {
  ClientConfig a = c.attacker;
  a.request_rate = p.attack.max ? 0 : p.attack.rate;
  return a;
}

bool attacker_active(const PhaseSpec& p) { return p.attack.max || p.attack.rate > 0; }

// One deployment of server, attacker and optional client.
class World {
 public:
  virtual ~World() = default;
  virtual void apply(const PhaseSpec& phase) = 0;
  /// `t` is time since the world was created.
  virtual void advance_to(Duration t) = 0;
  virtual std::map<std::string, RoleSnapshot> snapshot() = 0;
  virtual std::uint64_t attacker_key_exchanges() = 0;
};

class SimWorld final : public World {
 public:
  SimWorld(const ScenarioConfig& c, std::uint64_t stream)
      : config_(c),
        sim_(SimOptions{c.network, c.cost_model ? *c.cost_model : CostModel::calibrated()}),
        key_rng_(c.seed, 8 * stream + 1),
        server_rng_(c.seed, 8 * stream + 2),
        attacker_rng_(c.seed, 8 * stream + 3),
        client_rng_(c.seed, 8 * stream + 4),
        keys_(std::make_shared<SharedKeyStore>(
            std::make_shared<const TokenKeyStore>(TokenKeyStore::generate(key_rng_)))),
        server_(keys_, c.server, server_rng_,
                ServerOptions{c.defer_key_exchange, kSimUnixBase}),
        server_node_(server_),
        attacker_(actor_options(c.attacker, kAttackerAddr, c.attacker_window), attacker_rng_) {
    sim_.add(server_node_, kServerAddr);
    sim_.add(attacker_, kAttackerAddr);
    if (c.client) {
      client_.emplace(actor_options(*c.client, kClientAddr, 1), client_rng_);
      sim_.add(*client_, kClientAddr);
    }
  }

  void apply(const PhaseSpec& p) override {
    server_.set_policy(phase_policy(config_, p));
    attacker_.reconfigure(attacker_config(config_, p), p.attack.max, attacker_active(p),
                          sim_.now());
    if (client_) client_->reconfigure(*config_.client, false, p.client_active, sim_.now());
  }

  void advance_to(Duration t) override { sim_.run_until(t); }

  std::map<std::string, RoleSnapshot> snapshot() override {
    std::map<std::string, RoleSnapshot> s;
    s[kRoleServer] = server_.sink().snapshot();
    s[kRoleAttacker] = attacker_.sink().snapshot();
    if (client_) s[kRoleClient] = client_->sink().snapshot();
    return s;
  }

  std::uint64_t attacker_key_exchanges() override {
    return server_.key_exchanges_for(kAttackerAddr);
  }

 private:
  static inline const Address kServerAddr{ipv4_mapped(10, 0, 0, 1), 443};
  static inline const Address kAttackerAddr{ipv4_mapped(10, 0, 0, 66), 50066};
  static inline const Address kClientAddr{ipv4_mapped(10, 0, 0, 2), 50002};

  static ClientNodeOptions actor_options(const ClientConfig& cfg, const Address& self,
                                         std::size_t window) {
    ClientNodeOptions o;
    o.config = cfg;
    o.server = kServerAddr;
    o.self = self;
    o.window = window;
    o.active = false;
    return o;
  }

  const ScenarioConfig& config_;
  Simulation sim_;
  DeterministicRandom key_rng_;
  DeterministicRandom server_rng_;
  DeterministicRandom attacker_rng_;
  DeterministicRandom client_rng_;
  std::shared_ptr<SharedKeyStore> keys_;
  ServerEndpoint server_;
  ServerNode server_node_;
  ClientNode attacker_;
  std::optional<ClientNode> client_;
};

class UdpWorld final : public World {
 public:
  explicit UdpWorld(const ScenarioConfig& c)
      : config_(c),
        epoch_(std::chrono::steady_clock::now()),
        keys_(std::make_shared<SharedKeyStore>(
            std::make_shared<const TokenKeyStore>(TokenKeyStore::generate(key_rng_)))),
        server_ep_(Address::parse(c.server_bind)),
        attacker_ep_(peer_bind()),
        server_(keys_, c.server, server_rng_,
                ServerOptions{c.defer_key_exchange, unix_base()}),
        server_node_(server_),
        attacker_(actor_options(c.attacker, attacker_ep_.local_address(), c.attacker_window),
                  attacker_rng_) {
    if (c.client) {
      client_ep_.emplace(peer_bind());
      client_.emplace(actor_options(*c.client, client_ep_->local_address(), 1), client_rng_);
    }
    drivers_.push_back(std::make_unique<RealtimeDriver>(server_node_, server_ep_, epoch_));
    drivers_.push_back(std::make_unique<RealtimeDriver>(attacker_, attacker_ep_, epoch_));
    if (client_) {
      drivers_.push_back(std::make_unique<RealtimeDriver>(*client_, *client_ep_, epoch_));
    }
    for (auto& d : drivers_) d->start();
  }

  ~UdpWorld() override {
    for (auto& d : drivers_) d->stop();
  }

  void apply(const PhaseSpec& p) override {
    const MitigationPolicy policy = phase_policy(config_, p);
    drivers_[0]->post([this, policy](Duration) { server_.set_policy(policy); });
    const ClientConfig a = attacker_config(config_, p);
    drivers_[1]->post([this, a, p](Duration now) {
      attacker_.reconfigure(a, p.attack.max, attacker_active(p), now);
    });
    if (client_) {
      drivers_[2]->post([this, p](Duration now) {
        client_->reconfigure(*config_.client, false, p.client_active, now);
      });
    }
  }

  void advance_to(Duration t) override { std::this_thread::sleep_until(epoch_ + t); }

  std::map<std::string, RoleSnapshot> snapshot() override {
    std::map<std::string, RoleSnapshot> s;
    s[kRoleServer] = server_.sink().snapshot();
    s[kRoleAttacker] = attacker_.sink().snapshot();
    if (client_) s[kRoleClient] = client_->sink().snapshot();
    return s;
  }

  std::uint64_t attacker_key_exchanges() override {
    // Read from the server thread's side through a posted call would delay
    // the report; the map is only inserted into, so read at the phase end
    // after a round trip through the server's mailbox.
    std::promise<std::uint64_t> done;
    auto f = done.get_future();
    const Address peer = attacker_ep_.local_address();
    drivers_[0]->post([&](Duration) { done.set_value(server_.key_exchanges_for(peer)); });
    return f.get();
  }

 private:
  Address peer_bind() const {
    Address a = Address::parse(config_.server_bind);
    a.port = 0;
    return a;
  }

  ClientNodeOptions actor_options(const ClientConfig& cfg, const Address& self,
                                  std::size_t window) const {
    ClientNodeOptions o;
    o.config = cfg;
    o.server = server_ep_.local_address();
    o.self = self;
    o.window = window;
    o.active = false;
    return o;
  }

  static std::uint64_t unix_base() {
    return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::seconds>(
                                          std::chrono::system_clock::now().time_since_epoch())
                                          .count());
  }

  const ScenarioConfig& config_;
  std::chrono::steady_clock::time_point epoch_;
  SystemRandom key_rng_;
  SystemRandom server_rng_;
  SystemRandom attacker_rng_;
  SystemRandom client_rng_;
  std::shared_ptr<SharedKeyStore> keys_;
  UdpEndpoint server_ep_;
  UdpEndpoint attacker_ep_;
  std::optional<UdpEndpoint> client_ep_;
  ServerEndpoint server_;
  ServerNode server_node_;
  ClientNode attacker_;
  std::optional<ClientNode> client_;
  std::vector<std::unique_ptr<RealtimeDriver>> drivers_;
};

std::unique_ptr<World> make_world(const ScenarioConfig& c, std::uint64_t stream) {
  if (c.backend == Backend::kInproc) return std::make_unique<SimWorld>(c, stream);
  try {
    return std::make_unique<UdpWorld>(c);
  } catch (const TransportError& e) {
    throw HarnessError(HarnessErrc::kBackend, e.what());
  }
}

}  // namespace

MetricsReport run_scenario(const ScenarioConfig& config) {
  config.validate();
  const std::vector<PhaseSpec> phases = plan_phases(config);

  MetricsReport report;
  std::unique_ptr<World> world;
  double world_origin = 0;  // report time at which `world` started
  double t = 0;

  for (std::size_t index = 0; index < phases.size(); ++index) {
    const PhaseSpec& p = phases[index];
    if (!world || config.isolate_phases) {
      world.reset();
      world = make_world(config, index);
      world_origin = t;
    }
    world->apply(p);

    PhaseReport pr;
    pr.name = p.name;
    pr.start_s = t;
    pr.duration_s = p.duration_s;
    auto prev = world->snapshot();
    for (const auto& [role, snap] : prev) pr.roles[role];
    const std::uint64_t kex_before = world->attacker_key_exchanges();

    double elapsed = 0;
    while (p.duration_s - elapsed > 1e-9) {
      elapsed = std::min(p.duration_s, elapsed + config.sample_interval_s);
      world->advance_to(seconds(t - world_origin + elapsed));
      auto cur = world->snapshot();

      std::map<std::string, RoleSnapshot> d;
      for (const auto& [role, snap] : cur) d[role] = delta(snap, prev[role]);
      const auto af = amplification_factor(d[kRoleServer].cpu.total(),
                                           d[kRoleAttacker].cpu.total());
      for (auto& [role, snap] : d) {
        report.rows.push_back({t + elapsed, p.name, role, snap.cpu, snap.counts,
                               median(snap.response_ms), af});
        pr.roles[role] += snap;
      }
      prev = std::move(cur);
    }
    pr.attacker_key_exchanges = world->attacker_key_exchanges() - kex_before;
    report.phases.push_back(std::move(pr));
    t += p.duration_s;
  }
  return report;
}

}  // namespace qfam
