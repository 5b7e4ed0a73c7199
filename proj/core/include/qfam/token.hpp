#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>

#include "qfam/bytes.hpp"
#include "qfam/error.hpp"

namespace qfam {

class RandomSource;

// Enhanced Retry token.
//
// Wire form:
//
//   header (13) || etb_len (2, BE) || encrypted body (etb_len) || icv (16)
//
// Header packing:
//   byte 0      type (1 bit) << 7 | key sequence (7 bits)
//   bytes 1..8  TIN, big-endian
//   bytes 9..12 (MRN << 4) | CCI as a 32-bit big-endian word
//
// The header travels in clear text and is authenticated as AEAD associated
// data, except for the MRN which the client overwrites with its puzzle answer.

enum class TokenErrc {
  kTruncatedToken,
  kLengthMismatch,
  kUnknownKeySequence,
  kAuthenticationFailed,
  kExpired,
  kMalformedBody,
  kInvalidField,
};
using TokenError = CodedError<TokenErrc>;

const char* to_string(TokenErrc code);

enum class TokenType : std::uint8_t { kRetry = 0, kNewToken = 1 };

inline constexpr std::size_t kTokenHeaderSize = 13;
inline constexpr std::size_t kIcvSize = 16;
inline constexpr std::size_t kMinTokenSize = kTokenHeaderSize + 2 + kIcvSize;
inline constexpr std::size_t kMaxConnectionIdLength = 20;
inline constexpr std::size_t kMaxEtbLength = 0xffff;

using Icv = std::array<std::uint8_t, kIcvSize>;

struct TokenHeader {
  TokenType type = TokenType::kRetry;
  KeySequence key_sequence;
  std::uint64_t tin = 0;
  Mrn mrn;
  Cci cci;

  friend bool operator==(const TokenHeader&, const TokenHeader&) = default;
};

struct TokenBody {
  std::uint64_t expiry = 0;  // absolute, Unix seconds
  Bytes odcid;               // at most 20 bytes
  std::uint16_t source_port = 0;
  Bytes opaque;              // at most 65535 bytes

  friend bool operator==(const TokenBody&, const TokenBody&) = default;
};

struct RetryToken {
  TokenHeader header;
  Bytes encrypted_body;
  Icv icv{};

  friend bool operator==(const RetryToken&, const RetryToken&) = default;
};

std::array<std::uint8_t, kTokenHeaderSize> encode_header(const TokenHeader& h);
TokenHeader decode_header(ByteView bytes);

/// Throws TokenError(kInvalidField) if the ETB exceeds the 16-bit length field.
Bytes encode_token(const RetryToken& token);
/// Errors: kTruncatedToken, kLengthMismatch.
RetryToken decode_token(ByteView bytes);

/// expiry(8) || odcid_len(1) || odcid || source_port(2) || opaque_len(2) || opaque
Bytes encode_body(const TokenBody& body);
/// Errors: kMalformedBody.
TokenBody decode_body(ByteView bytes);

/// Offset of the 32-bit MRN/CCI word inside an encoded token.
inline constexpr std::size_t kMrnWordOffset = 9;
/// Rewrites the MRN of an encoded token in place without touching other bytes.
void patch_mrn(Bytes& encoded_token, Mrn mrn);

struct TokenKey {
  std::array<std::uint8_t, 16> key{};      // AES-128-GCM
  std::array<std::uint8_t, 12> iv_base{};
};

class TokenKeyStore {
 public:
  TokenKeyStore(KeySequence active, const TokenKey& key);

  /// Fresh random key at `active`.
  static TokenKeyStore generate(RandomSource& rng, KeySequence active = {});

  void add(KeySequence seq, const TokenKey& key);
  void set_active(KeySequence seq);

  /// Throws TokenError(kUnknownKeySequence); never falls back to a default.
  const TokenKey& lookup(KeySequence seq) const;
  bool contains(KeySequence seq) const;
  KeySequence active_sequence() const { return active_; }

 private:
  std::map<std::uint8_t, TokenKey> entries_;
  KeySequence active_;
};

// Shared, read-mostly handle to the current key store. Rotation swaps the
// whole store; readers keep whatever snapshot they loaded.
class SharedKeyStore {
 public:
  explicit SharedKeyStore(std::shared_ptr<const TokenKeyStore> store);

  std::shared_ptr<const TokenKeyStore> load() const;
  void rotate(std::shared_ptr<const TokenKeyStore> store);

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const TokenKeyStore> store_;
};

struct AssociatedData {
  IpAddress client_ip{};
  TokenType type = TokenType::kRetry;
  KeySequence key_sequence;
  std::uint64_t tin = 0;
  Cci cci;
  Bytes rscid;  // Retry Source Connection ID, at most 20 bytes

  friend bool operator==(const AssociatedData&, const AssociatedData&) = default;
};

AssociatedData make_associated_data(const IpAddress& client_ip,
                                    const TokenHeader& header, ByteView rscid);

/// client_ip(16) || type<<7|seq (1) || tin(8) || cci(1) || rscidl(1) || rscid
Bytes serialize(const AssociatedData& ad);

using Nonce = std::array<std::uint8_t, 12>;

/// iv_base XOR (32 zero bits || TIN big-endian).
Nonce derive_nonce(const TokenKey& key, std::uint64_t tin);

/// AES-128-GCM over encode_body(body) with serialize(ad) as associated data.
/// Preconditions (std::invalid_argument): header.mrn == 0 and ad agrees with
/// the header. Errors: kUnknownKeySequence.
RetryToken seal_token(const TokenKeyStore& keys, const TokenHeader& header,
                      const TokenBody& body, const AssociatedData& ad);

/// Returns the body iff authentication succeeds and now_unix <= expiry.
/// Errors: kUnknownKeySequence, kAuthenticationFailed, kExpired.
TokenBody open_token(const TokenKeyStore& keys, const RetryToken& token,
                     const AssociatedData& ad, std::uint64_t now_unix);

}  // namespace qfam
