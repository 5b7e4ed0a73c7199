#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>

#include "qfam/bytes.hpp"
#include "qfam/error.hpp"

typedef struct evp_pkey_st EVP_PKEY;

namespace qfam {

// Real elliptic-curve Diffie-Hellman so handshake CPU cost is physical.
// Wire ids follow the TLS supported_groups registry.

enum class GroupId : std::uint16_t {
  kSecp256r1 = 0x0017,
  kSecp384r1 = 0x0018,
  kX25519 = 0x001D,
};

enum class CryptoErrc { kUnsupportedGroup, kInvalidPoint, kBackend };
using CryptoError = CodedError<CryptoErrc>;

inline constexpr GroupId kAllGroups[] = {GroupId::kX25519, GroupId::kSecp256r1,
                                         GroupId::kSecp384r1};

std::string_view group_name(GroupId group);
/// Accepts "x25519", "secp256r1", "secp384r1" (and "p256"/"p384").
std::optional<GroupId> group_from_name(std::string_view name);
/// Throws CryptoError(kUnsupportedGroup) for ids outside the closed set.
GroupId group_from_wire(std::uint16_t id);
/// Position in kAllGroups.
std::size_t group_index(GroupId group);
/// Encoded public share size: 32 for x25519, 1 + 2 * field bytes for P-curves.
std::size_t public_share_size(GroupId group);

class PrivateKey {
 public:
  PrivateKey() = default;
  explicit PrivateKey(EVP_PKEY* key);

  EVP_PKEY* get() const { return key_.get(); }
  explicit operator bool() const { return static_cast<bool>(key_); }

 private:
  struct Free {
    void operator()(EVP_PKEY* k) const;
  };
  std::unique_ptr<EVP_PKEY, Free> key_;
};

struct KeyShare {
  GroupId group;
  PrivateKey private_key;
  Bytes public_share;
};

/// Errors: kUnsupportedGroup.
KeyShare generate_keyshare(GroupId group);

/// Validates the peer point before the scalar multiplication.
/// Errors: kInvalidPoint, kUnsupportedGroup.
Bytes compute_shared(GroupId group, const PrivateKey& private_key,
                     ByteView peer_public);

/// A valid public share generated once per process and reused on every call.
/// Errors: kUnsupportedGroup.
const Bytes& precomputed_share(GroupId group);

}  // namespace qfam
