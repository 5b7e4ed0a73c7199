#include "qfam/packet.hpp"

#include "qfam/token.hpp"

namespace qfam {

const char* to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::kBadToken: return "bad_token";
    case RejectReason::kBadChallenge: return "bad_challenge";
    case RejectReason::kOverloaded: return "overloaded";
    case RejectReason::kUnsupportedGroup: return "unsupported_group";
  }
  return "unknown";
}

namespace {

[[noreturn]] void fail(PacketErrc code, const char* what) {
  throw PacketError(code, what);
}

void put_cid(ByteWriter& w, const Bytes& cid) {
  if (cid.size() > kMaxConnectionIdLength) {
    fail(PacketErrc::kInvalidField, "connection ID longer than 20 bytes");
  }
  w.u8(static_cast<std::uint8_t>(cid.size()));
  w.bytes(cid);
}

void put_vec16(ByteWriter& w, const Bytes& v) {
  if (v.size() > 0xffff) fail(PacketErrc::kInvalidField, "field exceeds 65535 bytes");
  w.u16(static_cast<std::uint16_t>(v.size()));
  w.bytes(v);
}

Bytes get_cid(ByteReader& r) {
  const std::size_t n = r.u8();
  if (n > kMaxConnectionIdLength) {
    fail(PacketErrc::kInvalidField, "connection ID longer than 20 bytes");
  }
  return r.take_bytes(n);
}

struct Encoder {
  Bytes& out;

  void operator()(const InitialMessage& m) const {
    ByteWriter w(out);
    w.u8(kTagInitial);
    w.u32(m.version);
    put_cid(w, m.dcid);
    put_cid(w, m.scid);
    put_vec16(w, m.token);
    w.u16(m.group_id);
    put_vec16(w, m.key_share);
  }
  void operator()(const RetryPacket& m) const {
    ByteWriter w(out);
    w.u8(static_cast<std::uint8_t>(kRetryFirstByte |
                                   (m.mitigation ? kMitigationBit : 0)));
    w.u32(m.version);
    put_cid(w, m.dcid);
    put_cid(w, m.scid);
    w.bytes(m.token);
  }
  void operator()(const ShloMessage& m) const {
    ByteWriter w(out);
    w.u8(kTagShlo);
    put_cid(w, m.dcid);
    put_cid(w, m.scid);
    w.u16(m.group_id);
    put_vec16(w, m.key_share);
  }
  void operator()(const RejectMessage& m) const {
    ByteWriter w(out);
    w.u8(kTagReject);
    put_cid(w, m.dcid);
    w.u8(static_cast<std::uint8_t>(m.reason));
  }
};

RetryPacket decode_retry(ByteReader& r, std::uint8_t first) {
  RetryPacket p;
  p.mitigation = (first & kMitigationBit) != 0;
  p.version = r.u32();
  p.dcid = get_cid(r);
  p.scid = get_cid(r);
  ByteView rest = r.rest();
  p.token.assign(rest.begin(), rest.end());
  return p;
}

}  // namespace

Bytes encode_message(const HandshakeMessage& msg) {
  Bytes out;
  std::visit(Encoder{out}, msg);
  if (out.size() > kMaxDatagramSize) {
    fail(PacketErrc::kOversizedDatagram, "datagram exceeds 1200 bytes");
  }
  return out;
}

HandshakeMessage decode_message(ByteView datagram) {
  if (datagram.empty()) fail(PacketErrc::kTruncated, "empty datagram");
  if (datagram.size() > kMaxDatagramSize) {
    fail(PacketErrc::kOversizedDatagram, "datagram exceeds 1200 bytes");
  }
  try {
    ByteReader r(datagram);
    const std::uint8_t first = r.u8();
    if ((first & 0xF0) == kRetryFirstByte) {
      if ((first & 0x07) != 0) {
        fail(PacketErrc::kInvalidField, "reserved Retry bits set");
      }
      return decode_retry(r, first);
    }

    switch (first) {
      case kTagInitial: {
        InitialMessage m;
        m.version = r.u32();
        m.dcid = get_cid(r);
        m.scid = get_cid(r);
        m.token = r.take_bytes(r.u16());
        m.group_id = r.u16();
        m.key_share = r.take_bytes(r.u16());
        if (!r.empty()) fail(PacketErrc::kInvalidField, "trailing bytes");
        return m;
      }
      case kTagShlo: {
        ShloMessage m;
        m.dcid = get_cid(r);
        m.scid = get_cid(r);
        m.group_id = r.u16();
        m.key_share = r.take_bytes(r.u16());
        if (!r.empty()) fail(PacketErrc::kInvalidField, "trailing bytes");
        return m;
      }
      case kTagReject: {
        RejectMessage m;
        m.dcid = get_cid(r);
        const std::uint8_t reason = r.u8();
        if (reason < 1 || reason > 4) {
          fail(PacketErrc::kInvalidField, "unknown reject reason");
        }
        m.reason = static_cast<RejectReason>(reason);
        if (!r.empty()) fail(PacketErrc::kInvalidField, "trailing bytes");
        return m;
      }
      default:
        fail(PacketErrc::kUnknownType, "unknown message type");
    }
  } catch (const ReaderUnderflow&) {
    fail(PacketErrc::kTruncated, "truncated datagram");
  }
}

LegacyRetryView decode_retry_legacy(ByteView datagram) {
  if (datagram.empty()) fail(PacketErrc::kTruncated, "empty datagram");
  try {
    ByteReader r(datagram);
    const std::uint8_t first = r.u8();
    // RFC 9000: form, fixed bit and packet type; the low nibble is unused.
    if ((first & 0xF0) != kRetryFirstByte) {
      fail(PacketErrc::kUnknownType, "not a Retry packet");
    }
    LegacyRetryView v;
    v.version = r.u32();
    v.dcid = get_cid(r);
    v.scid = get_cid(r);
    ByteView rest = r.rest();
    v.token.assign(rest.begin(), rest.end());
    return v;
  } catch (const ReaderUnderflow&) {
    fail(PacketErrc::kTruncated, "truncated datagram");
  }
}

}  // namespace qfam
