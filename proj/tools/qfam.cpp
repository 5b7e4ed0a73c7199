// qfam: server, client, attacker and experiment runner.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "qfam/client.hpp"
#include "qfam/scenario.hpp"
#include "qfam/server.hpp"
#include "qfam/token.hpp"
#include "qfam/transport.hpp"

namespace {

using namespace qfam;
using namespace std::chrono_literals;

std::atomic<bool> g_stop{false};
std::atomic<bool> g_reload{false};

extern "C" void on_signal(int sig) {
  if (sig == SIGHUP) {
    g_reload = true;
  } else {
    g_stop = true;
  }
}

void install_signals() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::signal(SIGHUP, on_signal);
}

GroupId parse_group_flag(const std::string& name) {
  auto g = group_from_name(name);
  if (!g) throw CLI::ValidationError("--group", "unknown group " + name);
  return *g;
}

std::string format_counts(const RoleSnapshot& s) {
  std::ostringstream out;
  out << "sent=" << s.counts[Counter::kSent] << " retries=" << s.counts[Counter::kRetries]
      << " shlos=" << s.counts[Counter::kShlos]
      << " rejects=" << s.counts.rejects() << " (badtoken="
      << s.counts[Counter::kRejectBadToken]
      << " badchallenge=" << s.counts[Counter::kRejectBadChallenge]
      << " overloaded=" << s.counts[Counter::kRejectOverloaded] << ")"
      << " timeouts=" << s.counts[Counter::kTimeouts] << std::fixed << std::setprecision(3)
      << " cpu_s=" << s.cpu.total();
  return out.str();
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string bind = "127.0.0.1:8443";
  std::string mitigation = "off";
  std::string cci;
  std::string policy_file;
  double duration_s = 0;
  double stats_interval_s = 0;
};

MitigationPolicy serve_policy(const ServeArgs& a, bool mode_given, bool cci_given) {
  MitigationPolicy p;
  if (!a.policy_file.empty()) p = load_policy_file(a.policy_file);
  if (mode_given) p.mode = *mitigation_mode_from_name(a.mitigation);
  if (cci_given) {
    if (a.cci == "table") {
      p.pinned_cci.reset();
    } else {
      p.pinned_cci = Cci(std::stoul(a.cci));
    }
  }
  p.validate();
  return p;
}

int run_serve(const ServeArgs& a, bool mode_given, bool cci_given) {
  MitigationPolicy policy = serve_policy(a, mode_given, cci_given);

  SystemRandom key_rng;
  SystemRandom rng;
  auto keys = std::make_shared<SharedKeyStore>(
      std::make_shared<const TokenKeyStore>(TokenKeyStore::generate(key_rng)));
  const auto unix_base = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count());
  ServerEndpoint server(keys, policy, rng, ServerOptions{true, unix_base});
  ServerNode node(server);
  UdpEndpoint endpoint(Address::parse(a.bind));
  RealtimeDriver driver(node, endpoint, std::chrono::steady_clock::now());

  std::cerr << "listening on " << endpoint.local_address().to_string() << "\n"
            << format_policy(policy);
  install_signals();
  driver.start();

  const auto start = std::chrono::steady_clock::now();
  auto next_stats = start;
  while (!g_stop) {
    std::this_thread::sleep_for(50ms);
    const auto now = std::chrono::steady_clock::now();
    if (a.duration_s > 0 && now - start >= std::chrono::duration<double>(a.duration_s)) break;
    if (g_reload.exchange(false)) {
      if (a.policy_file.empty()) {
        std::cerr << "SIGHUP: no policy file to reload\n";
      } else {
        try {
          MitigationPolicy p = serve_policy(a, mode_given, cci_given);
          driver.post([&server, p](Duration) { server.set_policy(p); });
          std::cerr << "policy reloaded\n" << format_policy(p);
        } catch (const std::exception& e) {
          std::cerr << "policy reload failed, keeping current policy: " << e.what() << "\n";
        }
      }
    }
    if (a.stats_interval_s > 0 && now >= next_stats) {
      next_stats = now + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                             std::chrono::duration<double>(a.stats_interval_s));
      std::cerr << "server " << format_counts(server.sink().snapshot()) << "\n";
    }
  }
  driver.stop();
  std::cout << "server " << format_counts(server.sink().snapshot()) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ClientArgs {
  std::string server = "127.0.0.1:8443";
  std::string bind = "127.0.0.1:0";
  std::string group = "x25519";
  double rate = 0;
  bool legacy = false;
  double duration_s = 10;
  double timeout_s = 5;
};

int run_client(const ClientArgs& a) {
  ClientNodeOptions o;
  o.config = ClientConfig::legitimate();
  o.config.group = parse_group_flag(a.group);
  o.config.request_rate = a.rate;
  o.config.qfam_capable = !a.legacy;
  o.server = Address::parse(a.server);

  UdpEndpoint endpoint(Address::parse(a.bind));
  o.self = endpoint.local_address();
  SystemRandom rng;
  ClientNode node(o, rng);
  RealtimeDriver driver(node, endpoint, std::chrono::steady_clock::now());
  install_signals();
  driver.start();

  const auto start = std::chrono::steady_clock::now();
  const double limit = a.rate > 0 ? a.duration_s : a.timeout_s;
  while (!g_stop && std::chrono::steady_clock::now() - start <
                        std::chrono::duration<double>(limit)) {
    if (a.rate <= 0 && node.sink().count(Counter::kShlos) > 0) break;
    std::this_thread::sleep_for(5ms);
  }
  driver.stop();

  const RoleSnapshot s = node.sink().snapshot();
  std::cout << "client " << format_counts(s);
  if (auto m = median(s.response_ms)) std::cout << " median_response_ms=" << *m;
  if (auto m = median(s.solve_ms)) std::cout << " median_solve_ms=" << *m;
  std::cout << "\n";
  if (a.rate <= 0) return s.counts[Counter::kShlos] > 0 ? 0 : 1;
  return 0;
}

// ---------------------------------------------------------------------------

struct AttackArgs {
  std::string server = "127.0.0.1:8443";
  std::string bind = "127.0.0.1:0";
  std::string group = "secp384r1";
  double rate = 0;
  bool precomputed = false;
  bool no_solve = false;
  double duration_s = 10;
  std::size_t window = 64;
};

int run_attack(const AttackArgs& a) {
  ClientConfig c;
  c.group = parse_group_flag(a.group);
  c.request_rate = a.rate;
  c.key_share_mode = a.precomputed ? KeyShareMode::kPrecomputed : KeyShareMode::kRandom;
  c.solve_challenges = !a.no_solve;

  UdpEndpoint endpoint(Address::parse(a.bind));
  const FloodStats s =
      run_flood(c, std::chrono::duration_cast<Duration>(std::chrono::duration<double>(a.duration_s)),
                Address::parse(a.server), endpoint, a.window);
  std::cout << std::fixed << std::setprecision(3) << "attack sent=" << s.sent
            << " retries=" << s.retries_received << " shlos=" << s.shlos
            << " rejects=" << s.rejects
            << " solve_s=" << std::chrono::duration<double>(s.solve_time_total).count()
            << " cpu_s=" << std::chrono::duration<double>(s.cpu_time).count() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ExperimentArgs {
  std::string config;
  std::string output;
  std::optional<std::uint64_t> seed;
};

std::string cost_model_json(const CostModel& m) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "{\"step_ns\": " << m.step_ns << ", \"datagram_ns\": " << m.datagram_ns
      << ", \"digest_ns\": " << m.digest_ns << ", \"aead_ns\": " << m.aead_ns;
  for (const auto& [key, table] : {std::pair{"keygen_ns", &m.keygen_ns},
                                   std::pair{"derive_ns", &m.derive_ns}}) {
    out << ", \"" << key << "\": {";
    for (GroupId g : kAllGroups) {
      out << (g == kAllGroups[0] ? "" : ", ") << '"' << group_name(g)
          << "\": " << (*table)[group_index(g)];
    }
    out << "}";
  }
  out << "}";
  return out.str();
}

int run_experiment(const ExperimentArgs& a) {
  ScenarioConfig cfg = ScenarioConfig::load(a.config);
  if (a.seed) {
    cfg.seed = *a.seed;
    cfg.network.seed = *a.seed;
  }
  const std::string output = a.output.empty() ? cfg.output : a.output;
  if (cfg.backend == Backend::kInproc && !cfg.cost_model) {
    // Counts depend on the cost model; print it so a rerun can pin it.
    std::cerr << "cost_model " << cost_model_json(CostModel::calibrated()) << "\n";
  }
  const MetricsReport report = run_scenario(cfg);

  if (output.empty() || output == "-") {
    emit_csv(report, std::cout);
  } else {
    emit_csv(report, std::filesystem::path(output));
  }
  for (const PhaseReport& p : report.phases) {
    std::cerr << std::left << std::setw(28) << p.name << std::right;
    const auto af = p.amplification_factor();
    std::cerr << " af=" << (af ? std::to_string(*af) : std::string("-"));
    for (const auto& [role, snap] : p.roles) {
      std::cerr << "\n  " << std::setw(8) << role << " " << format_counts(snap);
    }
    std::cerr << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

template <class T>
std::string hex_int(T v, int width) {
  std::ostringstream out;
  out << "0x" << std::hex << std::setw(width) << std::setfill('0')
      << static_cast<std::uint64_t>(v);
  return out.str();
}

int run_token_inspect(const std::string& hex) {
  const Bytes raw = from_hex(hex);
  const RetryToken t = decode_token(raw);
  const TokenHeader& h = t.header;
  const auto header = encode_header(h);
  std::cout << "length        " << raw.size() << " bytes\n"
            << "header        " << to_hex(header) << "\n"
            << "type          " << static_cast<unsigned>(h.type) << " ("
            << (h.type == TokenType::kRetry ? "retry" : "new_token") << ")\n"
            << "key_sequence  " << unsigned(h.key_sequence.value()) << " ("
            << hex_int(h.key_sequence.value(), 2) << ")\n"
            << "tin           " << h.tin << " (" << hex_int(h.tin, 16) << ")\n"
            << "mrn           " << h.mrn.value() << " (" << hex_int(h.mrn.value(), 7)
            << ")\n"
            << "cci           " << unsigned(h.cci.value()) << " ("
            << hex_int(h.cci.value(), 1) << ")\n"
            << "etb_len       " << t.encrypted_body.size() << " ("
            << hex_int(t.encrypted_body.size(), 4) << ")\n"
            << "etb           " << to_hex(t.encrypted_body) << "\n"
            << "icv           " << to_hex(t.icv) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QUIC Retry tokens with a proof-of-work challenge"};
  app.require_subcommand(1);

  ServeArgs serve;
  auto* s = app.add_subcommand("serve", "Run a handshake server over UDP");
  s->add_option("--bind", serve.bind, "host:port")->capture_default_str();
  auto* mode_opt = s->add_option("--mitigation", serve.mitigation, "off, on or auto")
                       ->check(CLI::IsMember({"off", "on", "auto"}));
  auto* cci_opt = s->add_option("--cci", serve.cci, "0..15, or 'table' to follow the rate table")
                      ->check([](const std::string& v) -> std::string {
                        if (v == "table") return {};
                        try {
                          if (std::stoul(v) <= Cci::kMax) return {};
                        } catch (const std::exception&) {
                        }
                        return "cci must be 0..15 or 'table'";
                      });
  s->add_option("--policy-file", serve.policy_file, "reloaded on SIGHUP")
      ->check(CLI::ExistingFile);
  s->add_option("--duration", serve.duration_s, "seconds; 0 runs until SIGINT");
  s->add_option("--stats-interval", serve.stats_interval_s, "seconds between stderr reports");

  ClientArgs client;
  auto* c = app.add_subcommand("client", "Run a legitimate client");
  c->add_option("--server", client.server)->capture_default_str();
  c->add_option("--bind", client.bind)->capture_default_str();
  c->add_option("--group", client.group)->capture_default_str();
  c->add_option("--rate", client.rate, "handshakes per second; 0 for a single handshake");
  c->add_flag("--legacy", client.legacy, "ignore the mitigation bit and echo tokens");
  c->add_option("--duration", client.duration_s, "seconds, with --rate")->capture_default_str();
  c->add_option("--timeout", client.timeout_s, "seconds, single handshake")
      ->capture_default_str();

  AttackArgs attack;
  auto* k = app.add_subcommand("attack", "Flood a server with Initials");
  k->add_option("--server", attack.server)->capture_default_str();
  k->add_option("--bind", attack.bind)->capture_default_str();
  k->add_option("--rate", attack.rate, "Initials per second; 0 floods as fast as possible");
  k->add_flag("--precomputed-share", attack.precomputed,
              "reuse one valid key share (default: random bytes)");
  k->add_flag("--no-solve", attack.no_solve, "echo challenge tokens unsolved");
  k->add_option("--group", attack.group)->capture_default_str();
  k->add_option("--duration", attack.duration_s)->capture_default_str();
  k->add_option("--window", attack.window, "max-rate handshakes in flight")
      ->capture_default_str();

  ExperimentArgs exp;
  auto* e = app.add_subcommand("experiment", "Scenario runner");
  e->require_subcommand(1);
  auto* er = e->add_subcommand("run", "Run a scenario from a JSON config and write CSV");
  er->add_option("config", exp.config)->required()->check(CLI::ExistingFile);
  er->add_option("-o,--output", exp.output, "CSV path; '-' for stdout");
  er->add_option("--seed", exp.seed);

  std::string token_hex;
  auto* t = app.add_subcommand("token", "Token tools");
  t->require_subcommand(1);
  auto* ti = t->add_subcommand("inspect", "Decode an encoded token");
  ti->add_option("hex", token_hex)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*s) return run_serve(serve, mode_opt->count() > 0, cci_opt->count() > 0);
    if (*c) return run_client(client);
    if (*k) return run_attack(attack);
    if (*er) return run_experiment(exp);
    if (*ti) return run_token_inspect(token_hex);
  } catch (const std::exception& ex) {
    std::cerr << "qfam: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
