#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qfam {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

// Unsigned integer restricted to a fixed number of bits on the wire.
// Construction with an out-of-range value throws std::out_of_range, so a
// value of this type is always encodable.
template <unsigned Bits, class Rep>
class BoundedUint {
  static_assert(Bits < sizeof(Rep) * 8);

 public:
  static constexpr Rep kMax = static_cast<Rep>((Rep{1} << Bits) - 1);
  static constexpr std::uint64_t kCardinality = std::uint64_t{1} << Bits;

  constexpr BoundedUint() = default;
  constexpr explicit BoundedUint(std::uint64_t v) : value_(check(v)) {}

  constexpr Rep value() const noexcept { return value_; }

  friend constexpr bool operator==(BoundedUint, BoundedUint) = default;
  friend constexpr auto operator<=>(BoundedUint, BoundedUint) = default;

 private:
  static constexpr Rep check(std::uint64_t v) {
    if (v > kMax) {
      throw std::out_of_range("value exceeds " + std::to_string(Bits) +
                              "-bit field");
    }
    return static_cast<Rep>(v);
  }

  Rep value_ = 0;
};

/// Challenge Complexity Index: required leading zero bits, 0..15.
using Cci = BoundedUint<4, std::uint8_t>;
/// Matched Random Number: the 28-bit puzzle answer carried in the token.
using Mrn = BoundedUint<28, std::uint32_t>;
/// Index into the server's token key store.
using KeySequence = BoundedUint<7, std::uint8_t>;

/// 128-bit address; IPv4 is carried in IPv4-mapped form (::ffff:a.b.c.d).
using IpAddress = std::array<std::uint8_t, 16>;

IpAddress ipv4_mapped(std::uint8_t a, std::uint8_t b, std::uint8_t c,
                      std::uint8_t d);
bool is_ipv4_mapped(const IpAddress& ip);

std::string to_hex(ByteView data);
/// Throws std::invalid_argument on odd length or non-hex characters.
Bytes from_hex(std::string_view hex);

inline ByteView as_view(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

// Big-endian writer over a growable buffer.
class ByteWriter {
 public:
  explicit ByteWriter(Bytes& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void bytes(ByteView v) { out_.insert(out_.end(), v.begin(), v.end()); }

 private:
  void put(std::uint64_t v, int width) {
    for (int shift = (width - 1) * 8; shift >= 0; shift -= 8) {
      out_.push_back(static_cast<std::uint8_t>(v >> shift));
    }
  }

  Bytes& out_;
};

struct ReaderUnderflow : std::runtime_error {
  ReaderUnderflow() : std::runtime_error("read past end of buffer") {}
};

// Big-endian cursor over a byte view; reads past the end throw
// ReaderUnderflow, which codecs translate into their own error codes.
class ByteReader {
 public:
  explicit ByteReader(ByteView data) : data_(data) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }

  ByteView take(std::size_t n) {
    need(n);
    ByteView v = data_.subspan(pos_, n);
    pos_ += n;
    return v;
  }
  Bytes take_bytes(std::size_t n) {
    ByteView v = take(n);
    return {v.begin(), v.end()};
  }
  ByteView rest() { return take(remaining()); }

  std::size_t remaining() const { return data_.size() - pos_; }
  bool empty() const { return remaining() == 0; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw ReaderUnderflow();
  }
  std::uint64_t get(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v = (v << 8) | data_[pos_++];
    return v;
  }

  ByteView data_;
  std::size_t pos_ = 0;
};

}  // namespace qfam
