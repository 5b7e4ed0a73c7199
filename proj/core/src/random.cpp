#include "qfam/random.hpp"

#include <openssl/rand.h>

#include <algorithm>
#include <stdexcept>

#include "sha256.hpp"

namespace qfam {

std::uint64_t RandomSource::next_u64() {
  std::array<std::uint8_t, 8> b{};
  fill(b);
  std::uint64_t v = 0;
  for (std::uint8_t x : b) v = (v << 8) | x;
  return v;
}

double RandomSource::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RandomSource::below(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("below(0)");
  // Rejection sampling keeps the result unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % bound;
}

void SystemRandom::fill(std::span<std::uint8_t> out) {
  if (out.empty()) return;
  if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1) {
    throw std::runtime_error("RAND_bytes failed");
  }
}

DeterministicRandom::DeterministicRandom(std::uint64_t seed,
                                         std::uint64_t stream)
    : seed_(seed), stream_(stream) {}

void DeterministicRandom::refill() {
  Bytes input;
  ByteWriter w(input);
  w.u64(seed_);
  w.u64(stream_);
  w.u64(counter_++);
  thread_local detail::Sha256 sha;
  block_ = sha(input);
  used_ = 0;
}

void DeterministicRandom::fill(std::span<std::uint8_t> out) {
  std::size_t pos = 0;
  while (pos < out.size()) {
    if (used_ == block_.size()) refill();
    std::size_t n = std::min(out.size() - pos, block_.size() - used_);
    std::copy_n(block_.begin() + static_cast<std::ptrdiff_t>(used_), n,
                out.begin() + static_cast<std::ptrdiff_t>(pos));
    used_ += n;
    pos += n;
  }
}

}  // namespace qfam
