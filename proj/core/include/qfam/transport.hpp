#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "qfam/bytes.hpp"
#include "qfam/error.hpp"

namespace qfam {

enum class TransportErrc { kOversizedDatagram, kInvalidAddress, kSocket, kAddressInUse };
using TransportError = CodedError<TransportErrc>;

struct Address {
  IpAddress ip{};
  std::uint16_t port = 0;

  /// "a.b.c.d:port" or "[v6]:port". Errors: kInvalidAddress.
  static Address parse(std::string_view text);
  std::string to_string() const;

  friend auto operator<=>(const Address&, const Address&) = default;
};

Address loopback4(std::uint16_t port);

struct Datagram {
  Bytes data;
  Address from;
};

// Datagram socket abstraction. recv() returns std::nullopt on timeout.
// One thread may use an endpoint at a time.
class Endpoint {
 public:
  virtual ~Endpoint() = default;

  /// Errors: kOversizedDatagram (> 1200 bytes).
  virtual void send(const Address& to, ByteView datagram) = 0;
  virtual std::optional<Datagram> recv(std::chrono::nanoseconds timeout) = 0;
  virtual Address local_address() const = 0;
};

class UdpEndpoint final : public Endpoint {
 public:
  /// Port 0 picks an ephemeral port. Errors: kSocket, kAddressInUse.
  explicit UdpEndpoint(const Address& bind);
  ~UdpEndpoint() override;
  UdpEndpoint(const UdpEndpoint&) = delete;
  UdpEndpoint& operator=(const UdpEndpoint&) = delete;

  void send(const Address& to, ByteView datagram) override;
  std::optional<Datagram> recv(std::chrono::nanoseconds timeout) override;
  Address local_address() const override { return local_; }

 private:
  int fd_ = -1;
  bool v4_ = true;
  Address local_;
};

struct InprocOptions {
  double loss = 0;                     // drop probability per datagram
  std::chrono::nanoseconds latency{0};
  std::uint64_t seed = 1;
  std::size_t queue_capacity = 4096;   // per receiving endpoint
};

// Real-time in-process network. Datagrams between a pair of endpoints arrive
// in send order; loss decisions come from a seeded generator.
class InprocNetwork {
 public:
  explicit InprocNetwork(InprocOptions options = {});
  ~InprocNetwork();

  /// Port 0 picks a free port. Errors: kAddressInUse.
  std::unique_ptr<Endpoint> bind(const Address& address);

  std::uint64_t dropped() const;

  struct State;

 private:
  std::shared_ptr<State> state_;
};

}  // namespace qfam
