#include "qfam/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>

#include "qfam/packet.hpp"
#include "qfam/random.hpp"

namespace qfam {

namespace {

[[noreturn]] void bad_address(std::string_view text) {
  throw TransportError(TransportErrc::kInvalidAddress,
                       "invalid address: " + std::string(text));
}

void check_size(ByteView datagram) {
  if (datagram.size() > kMaxDatagramSize) {
    throw TransportError(TransportErrc::kOversizedDatagram,
                         "datagram exceeds 1200 bytes");
  }
}

std::uint16_t parse_port(std::string_view text, std::string_view whole) {
  if (text.empty() || text.size() > 5) bad_address(whole);
  unsigned v = 0;
  for (char c : text) {
    if (c < '0' || c > '9') bad_address(whole);
    v = v * 10 + static_cast<unsigned>(c - '0');
  }
  if (v > 0xffff) bad_address(whole);
  return static_cast<std::uint16_t>(v);
}

}  // namespace

Address Address::parse(std::string_view text) {
  Address a;
  std::string host;
  std::string_view port;
  if (!text.empty() && text.front() == '[') {
    const auto close = text.find(']');
    if (close == std::string_view::npos || close + 1 >= text.size() ||
        text[close + 1] != ':') {
      bad_address(text);
    }
    host = std::string(text.substr(1, close - 1));
    port = text.substr(close + 2);
    in6_addr v6{};
    if (inet_pton(AF_INET6, host.c_str(), &v6) != 1) bad_address(text);
    std::memcpy(a.ip.data(), &v6, 16);
  } else {
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos) bad_address(text);
    host = std::string(text.substr(0, colon));
    port = text.substr(colon + 1);
    in_addr v4{};
    if (inet_pton(AF_INET, host.c_str(), &v4) != 1) bad_address(text);
    const auto* b = reinterpret_cast<const std::uint8_t*>(&v4);
    a.ip = ipv4_mapped(b[0], b[1], b[2], b[3]);
  }
  a.port = parse_port(port, text);
  return a;
}

std::string Address::to_string() const {
  char buf[INET6_ADDRSTRLEN] = {};
  if (is_ipv4_mapped(ip)) {
    inet_ntop(AF_INET, ip.data() + 12, buf, sizeof buf);
    return std::string(buf) + ":" + std::to_string(port);
  }
  inet_ntop(AF_INET6, ip.data(), buf, sizeof buf);
  return "[" + std::string(buf) + "]:" + std::to_string(port);
}

Address loopback4(std::uint16_t port) {
  return Address{ipv4_mapped(127, 0, 0, 1), port};
}

// ---------------------------------------------------------------------------
// UDP

namespace {

[[noreturn]] void socket_error(const char* what) {
  const int err = errno;
  throw TransportError(err == EADDRINUSE ? TransportErrc::kAddressInUse
                                         : TransportErrc::kSocket,
                       std::string(what) + ": " + std::strerror(err));
}

socklen_t to_sockaddr(const Address& a, bool v4, sockaddr_storage& ss) {
  std::memset(&ss, 0, sizeof ss);
  if (v4) {
    auto* sin = reinterpret_cast<sockaddr_in*>(&ss);
    sin->sin_family = AF_INET;
    sin->sin_port = htons(a.port);
    std::memcpy(&sin->sin_addr, a.ip.data() + 12, 4);
    return sizeof(sockaddr_in);
  }
  auto* sin6 = reinterpret_cast<sockaddr_in6*>(&ss);
  sin6->sin6_family = AF_INET6;
  sin6->sin6_port = htons(a.port);
  std::memcpy(&sin6->sin6_addr, a.ip.data(), 16);
  return sizeof(sockaddr_in6);
}

Address from_sockaddr(const sockaddr_storage& ss) {
  Address a;
  if (ss.ss_family == AF_INET) {
    const auto* sin = reinterpret_cast<const sockaddr_in*>(&ss);
    const auto* b = reinterpret_cast<const std::uint8_t*>(&sin->sin_addr);
    a.ip = ipv4_mapped(b[0], b[1], b[2], b[3]);
    a.port = ntohs(sin->sin_port);
  } else {
    const auto* sin6 = reinterpret_cast<const sockaddr_in6*>(&ss);
    std::memcpy(a.ip.data(), &sin6->sin6_addr, 16);
    a.port = ntohs(sin6->sin6_port);
  }
  return a;
}

}  // namespace

UdpEndpoint::UdpEndpoint(const Address& bind) : v4_(is_ipv4_mapped(bind.ip)) {
  fd_ = ::socket(v4_ ? AF_INET : AF_INET6, SOCK_DGRAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) socket_error("socket");
  const int buf = 4 << 20;
  ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &buf, sizeof buf);
  ::setsockopt(fd_, SOL_SOCKET, SO_SNDBUF, &buf, sizeof buf);

  sockaddr_storage ss{};
  const socklen_t len = to_sockaddr(bind, v4_, ss);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&ss), len) != 0) {
    ::close(fd_);
    socket_error("bind");
  }
  socklen_t got = sizeof ss;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&ss), &got);
  local_ = from_sockaddr(ss);
}

UdpEndpoint::~UdpEndpoint() {
  if (fd_ >= 0) ::close(fd_);
}

void UdpEndpoint::send(const Address& to, ByteView datagram) {
  check_size(datagram);
  if (is_ipv4_mapped(to.ip) != v4_) {
    throw TransportError(TransportErrc::kInvalidAddress,
                         "address family mismatch: " + to.to_string());
  }
  sockaddr_storage ss{};
  const socklen_t len = to_sockaddr(to, v4_, ss);
  if (::sendto(fd_, datagram.data(), datagram.size(), 0,
               reinterpret_cast<sockaddr*>(&ss), len) < 0) {
    // UDP is lossy anyway; a full send buffer or ICMP error is a drop.
    if (errno == EAGAIN || errno == ENOBUFS || errno == ECONNREFUSED) return;
    socket_error("sendto");
  }
}

std::optional<Datagram> UdpEndpoint::recv(std::chrono::nanoseconds timeout) {
  if (timeout.count() < 0) timeout = {};
  pollfd pfd{fd_, POLLIN, 0};
  const timespec ts{static_cast<time_t>(timeout.count() / 1'000'000'000),
                    static_cast<long>(timeout.count() % 1'000'000'000)};
  const int ready = ::ppoll(&pfd, 1, &ts, nullptr);
  if (ready < 0) {
    if (errno == EINTR) return std::nullopt;
    socket_error("ppoll");
  }
  if (ready == 0) return std::nullopt;

  std::uint8_t buf[2048];
  sockaddr_storage ss{};
  socklen_t len = sizeof ss;
  const ssize_t n = ::recvfrom(fd_, buf, sizeof buf, MSG_DONTWAIT,
                               reinterpret_cast<sockaddr*>(&ss), &len);
  if (n < 0) {
    if (errno == EAGAIN || errno == EINTR || errno == ECONNREFUSED) {
      return std::nullopt;
    }
    socket_error("recvfrom");
  }
  return Datagram{Bytes(buf, buf + n), from_sockaddr(ss)};
}

// ---------------------------------------------------------------------------
// In-process

namespace {

using SteadyClock = std::chrono::steady_clock;

struct Mailbox {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::pair<SteadyClock::time_point, Datagram>> queue;
};

}  // namespace

struct InprocNetwork::State {
  explicit State(const InprocOptions& o) : options(o), rng(o.seed, 0x6e6574) {}

  InprocOptions options;
  std::mutex mu;
  DeterministicRandom rng;
  std::map<Address, std::shared_ptr<Mailbox>> boxes;
  std::uint16_t next_port = 40000;
  std::uint64_t dropped = 0;
};

namespace {

class InprocEndpoint final : public Endpoint {
 public:
  InprocEndpoint(std::shared_ptr<InprocNetwork::State> net, Address local,
                 std::shared_ptr<Mailbox> box)
      : net_(std::move(net)), local_(local), box_(std::move(box)) {}

  ~InprocEndpoint() override {
    std::lock_guard lock(net_->mu);
    net_->boxes.erase(local_);
  }

  void send(const Address& to, ByteView datagram) override {
    check_size(datagram);
    std::shared_ptr<Mailbox> dest;
    {
      std::lock_guard lock(net_->mu);
      const bool lost =
          net_->options.loss > 0 && net_->rng.uniform() < net_->options.loss;
      auto it = net_->boxes.find(to);
      if (lost || it == net_->boxes.end()) {
        ++net_->dropped;
        return;
      }
      dest = it->second;
    }
    const auto deliver_at = SteadyClock::now() + net_->options.latency;
    {
      std::lock_guard lock(dest->mu);
      if (dest->queue.size() >= net_->options.queue_capacity) {
        std::lock_guard nl(net_->mu);
        ++net_->dropped;
        return;
      }
      dest->queue.emplace_back(deliver_at,
                               Datagram{Bytes(datagram.begin(), datagram.end()), local_});
    }
    dest->cv.notify_one();
  }

  std::optional<Datagram> recv(std::chrono::nanoseconds timeout) override {
    const auto deadline = SteadyClock::now() + timeout;
    std::unique_lock lock(box_->mu);
    while (true) {
      const auto now = SteadyClock::now();
      if (!box_->queue.empty() && box_->queue.front().first <= now) {
        Datagram d = std::move(box_->queue.front().second);
        box_->queue.pop_front();
        return d;
      }
      if (now >= deadline) return std::nullopt;
      auto wake = deadline;
      if (!box_->queue.empty()) wake = std::min(wake, box_->queue.front().first);
      box_->cv.wait_until(lock, wake);
    }
  }

  Address local_address() const override { return local_; }

 private:
  std::shared_ptr<InprocNetwork::State> net_;
  Address local_;
  std::shared_ptr<Mailbox> box_;
};

}  // namespace

InprocNetwork::InprocNetwork(InprocOptions options)
    : state_(std::make_shared<State>(options)) {}

InprocNetwork::~InprocNetwork() = default;

std::unique_ptr<Endpoint> InprocNetwork::bind(const Address& address) {
  std::lock_guard lock(state_->mu);
  Address local = address;
  if (local.port == 0) {
    do {
      local.port = state_->next_port++;
    } while (state_->boxes.count(local) != 0);
  } else if (state_->boxes.count(local) != 0) {
    throw TransportError(TransportErrc::kAddressInUse,
                         "address in use: " + local.to_string());
  }
  auto box = std::make_shared<Mailbox>();
  state_->boxes.emplace(local, box);
  return std::make_unique<InprocEndpoint>(state_, local, std::move(box));
}

std::uint64_t InprocNetwork::dropped() const {
  std::lock_guard lock(state_->mu);
  return state_->dropped;
}

}  // namespace qfam
