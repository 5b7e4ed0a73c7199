#include "qfam/keyexchange.hpp"

#include <openssl/core_names.h>
#include <openssl/evp.h>
#include <openssl/params.h>

#include <mutex>

#include "qfam/work.hpp"

namespace qfam {

namespace {

[[noreturn]] void fail(CryptoErrc code, const char* what) {
  throw CryptoError(code, what);
}

struct PkeyCtxFree {
  void operator()(EVP_PKEY_CTX* c) const { EVP_PKEY_CTX_free(c); }
};
using PkeyCtx = std::unique_ptr<EVP_PKEY_CTX, PkeyCtxFree>;

// OpenSSL curve name for the P-curves, nullptr for x25519.
const char* curve_name(GroupId group) {
  switch (group) {
    case GroupId::kSecp256r1: return "P-256";
    case GroupId::kSecp384r1: return "P-384";
    case GroupId::kX25519: return nullptr;
  }
  fail(CryptoErrc::kUnsupportedGroup, "unsupported key exchange group");
}

void require_supported(GroupId group) { (void)curve_name(group); }

Bytes encoded_public(EVP_PKEY* key) {
  std::size_t len = 0;
  if (EVP_PKEY_get_octet_string_param(key, OSSL_PKEY_PARAM_ENCODED_PUBLIC_KEY,
                                      nullptr, 0, &len) != 1) {
    fail(CryptoErrc::kBackend, "public key export failed");
  }
  Bytes out(len);
  if (EVP_PKEY_get_octet_string_param(key, OSSL_PKEY_PARAM_ENCODED_PUBLIC_KEY,
                                      out.data(), out.size(), &len) != 1) {
    fail(CryptoErrc::kBackend, "public key export failed");
  }
  out.resize(len);
  return out;
}

// Parses a peer share into an EVP_PKEY; malformed encodings are InvalidPoint.
PrivateKey import_public(GroupId group, ByteView share) {
  if (share.size() != public_share_size(group)) {
    fail(CryptoErrc::kInvalidPoint, "public share has wrong length");
  }
  const char* curve = curve_name(group);
  PkeyCtx ctx(EVP_PKEY_CTX_new_from_name(nullptr, curve ? "EC" : "X25519",
                                         nullptr));
  if (!ctx || EVP_PKEY_fromdata_init(ctx.get()) != 1) {
    fail(CryptoErrc::kBackend, "key import setup failed");
  }
  OSSL_PARAM params[3];
  int n = 0;
  if (curve != nullptr) {
    params[n++] = OSSL_PARAM_construct_utf8_string(
        OSSL_PKEY_PARAM_GROUP_NAME, const_cast<char*>(curve), 0);
  }
  params[n++] = OSSL_PARAM_construct_octet_string(
      OSSL_PKEY_PARAM_PUB_KEY, const_cast<std::uint8_t*>(share.data()),
      share.size());
  params[n] = OSSL_PARAM_construct_end();

  EVP_PKEY* key = nullptr;
  if (EVP_PKEY_fromdata(ctx.get(), &key, EVP_PKEY_PUBLIC_KEY, params) != 1) {
    fail(CryptoErrc::kInvalidPoint, "peer public share rejected");
  }
  return PrivateKey(key);
}

}  // namespace

void PrivateKey::Free::operator()(EVP_PKEY* k) const { EVP_PKEY_free(k); }

PrivateKey::PrivateKey(EVP_PKEY* key) : key_(key) {}

std::string_view group_name(GroupId group) {
  switch (group) {
    case GroupId::kSecp256r1: return "secp256r1";
    case GroupId::kSecp384r1: return "secp384r1";
    case GroupId::kX25519: return "x25519";
  }
  return "unknown";
}

std::optional<GroupId> group_from_name(std::string_view name) {
  if (name == "x25519") return GroupId::kX25519;
  if (name == "secp256r1" || name == "p256") return GroupId::kSecp256r1;
  if (name == "secp384r1" || name == "p384") return GroupId::kSecp384r1;
  return std::nullopt;
}

GroupId group_from_wire(std::uint16_t id) {
  switch (id) {
    case 0x0017: return GroupId::kSecp256r1;
    case 0x0018: return GroupId::kSecp384r1;
    case 0x001D: return GroupId::kX25519;
    default: fail(CryptoErrc::kUnsupportedGroup, "unsupported key exchange group");
  }
}

std::size_t group_index(GroupId group) {
  switch (group) {
    case GroupId::kX25519: return 0;
    case GroupId::kSecp256r1: return 1;
    case GroupId::kSecp384r1: return 2;
  }
  fail(CryptoErrc::kUnsupportedGroup, "unsupported key exchange group");
}

std::size_t public_share_size(GroupId group) {
  switch (group) {
    case GroupId::kSecp256r1: return 65;
    case GroupId::kSecp384r1: return 97;
    case GroupId::kX25519: return 32;
  }
  fail(CryptoErrc::kUnsupportedGroup, "unsupported key exchange group");
}

KeyShare generate_keyshare(GroupId group) {
  const char* curve = curve_name(group);
  EVP_PKEY* key = curve ? EVP_PKEY_Q_keygen(nullptr, nullptr, "EC", curve)
                        : EVP_PKEY_Q_keygen(nullptr, nullptr, "X25519");
  if (key == nullptr) fail(CryptoErrc::kBackend, "key generation failed");
  ++detail::mutable_thread_work().keygens[group_index(group)];
  KeyShare share{group, PrivateKey(key), {}};
  share.public_share = encoded_public(key);
  return share;
}

Bytes compute_shared(GroupId group, const PrivateKey& private_key,
                     ByteView peer_public) {
  require_supported(group);
  if (!private_key) fail(CryptoErrc::kBackend, "missing private key");
  ++detail::mutable_thread_work().derives[group_index(group)];
  PrivateKey peer = import_public(group, peer_public);

  PkeyCtx ctx(EVP_PKEY_CTX_new_from_pkey(nullptr, private_key.get(), nullptr));
  if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1) {
    fail(CryptoErrc::kBackend, "derive setup failed");
  }
  // validate_peer = 1: full public key check before the scalar multiplication.
  if (EVP_PKEY_derive_set_peer_ex(ctx.get(), peer.get(), 1) != 1) {
    fail(CryptoErrc::kInvalidPoint, "peer public share failed validation");
  }
  std::size_t len = 0;
  if (EVP_PKEY_derive(ctx.get(), nullptr, &len) != 1) {
    fail(CryptoErrc::kBackend, "derive failed");
  }
  Bytes secret(len);
  if (EVP_PKEY_derive(ctx.get(), secret.data(), &len) != 1) {
    // x25519 rejects low-order points here (all-zero output).
    fail(CryptoErrc::kInvalidPoint, "shared secret derivation failed");
  }
  secret.resize(len);
  return secret;
}

const Bytes& precomputed_share(GroupId group) {
  require_supported(group);
  static std::once_flag once[3];
  static Bytes shares[3];
  const std::size_t idx = group_index(group);
  std::call_once(once[idx],
                 [&] { shares[idx] = generate_keyshare(group).public_share; });
  return shares[idx];
}

}  // namespace qfam
