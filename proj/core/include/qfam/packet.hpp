#pragma once

#include <cstdint>
#include <variant>

#include "qfam/bytes.hpp"
#include "qfam/error.hpp"

namespace qfam {

// Handshake datagrams, one message per datagram, at most 1200 bytes.
//
//   Initial  0x01 | version(4) | dcid_len(1) dcid | scid_len(1) scid
//                 | token_len(2) token | group(2) | key_share_len(2) key_share
//   Retry    1 1 11 M000 | version(4) | dcid_len(1) dcid | scid_len(1) scid
//                 | token (rest of datagram)
//            M is the mitigation bit: the MSB of the four bits RFC 9000
//            leaves unused in the Retry first byte.
//   Shlo     0x03 | dcid_len(1) dcid | scid_len(1) scid | group(2)
//                 | key_share_len(2) key_share
//   Reject   0x04 | dcid_len(1) dcid | reason(1)

enum class PacketErrc { kTruncated, kUnknownType, kOversizedDatagram, kInvalidField };
using PacketError = CodedError<PacketErrc>;

inline constexpr std::size_t kMaxDatagramSize = 1200;
inline constexpr std::uint32_t kQuicVersion1 = 0x00000001;

inline constexpr std::uint8_t kTagInitial = 0x01;
inline constexpr std::uint8_t kTagShlo = 0x03;
inline constexpr std::uint8_t kTagReject = 0x04;
inline constexpr std::uint8_t kRetryFirstByte = 0xF0;  // form, fixed bit, type 0b11
inline constexpr std::uint8_t kMitigationBit = 0x08;

enum class RejectReason : std::uint8_t {
  kBadToken = 1,
  kBadChallenge = 2,
  kOverloaded = 3,
  kUnsupportedGroup = 4,
};
const char* to_string(RejectReason reason);

struct InitialMessage {
  std::uint32_t version = kQuicVersion1;
  Bytes dcid;
  Bytes scid;
  Bytes token;  // empty on the first flight
  std::uint16_t group_id = 0;
  Bytes key_share;

  friend bool operator==(const InitialMessage&, const InitialMessage&) = default;
};

struct RetryPacket {
  bool mitigation = false;
  std::uint32_t version = kQuicVersion1;
  Bytes dcid;   // the client's SCID
  Bytes scid;   // chosen by the server; becomes the client's next DCID
  Bytes token;  // encoded RetryToken

  friend bool operator==(const RetryPacket&, const RetryPacket&) = default;
};

struct ShloMessage {
  Bytes dcid;  // the client's SCID
  Bytes scid;
  std::uint16_t group_id = 0;
  Bytes key_share;

  friend bool operator==(const ShloMessage&, const ShloMessage&) = default;
};

struct RejectMessage {
  Bytes dcid;  // the client's SCID
  RejectReason reason = RejectReason::kBadToken;

  friend bool operator==(const RejectMessage&, const RejectMessage&) = default;
};

using HandshakeMessage =
    std::variant<InitialMessage, RetryPacket, ShloMessage, RejectMessage>;

/// Errors: kOversizedDatagram, kInvalidField (connection ID over 20 bytes,
/// length field overflow).
Bytes encode_message(const HandshakeMessage& msg);

/// Errors: kTruncated, kUnknownType, kInvalidField, kOversizedDatagram.
HandshakeMessage decode_message(ByteView datagram);

// What a client unaware of the mitigation bit sees: the unused nibble is
// masked off and the token is passed through as opaque bytes.
struct LegacyRetryView {
  std::uint32_t version = 0;
  Bytes dcid;
  Bytes scid;
  Bytes token;
};
LegacyRetryView decode_retry_legacy(ByteView datagram);

}  // namespace qfam
