#include "qfam/token.hpp"

#include <openssl/evp.h>

#include <memory>

#include "qfam/random.hpp"
#include "qfam/work.hpp"

namespace qfam {

const char* to_string(TokenErrc code) {
  switch (code) {
    case TokenErrc::kTruncatedToken: return "truncated token";
    case TokenErrc::kLengthMismatch: return "token length mismatch";
    case TokenErrc::kUnknownKeySequence: return "unknown key sequence";
    case TokenErrc::kAuthenticationFailed: return "token authentication failed";
    case TokenErrc::kExpired: return "token expired";
    case TokenErrc::kMalformedBody: return "malformed token body";
    case TokenErrc::kInvalidField: return "invalid token field";
  }
  return "token error";
}

namespace {

[[noreturn]] void fail(TokenErrc code) { throw TokenError(code, to_string(code)); }

std::uint8_t type_and_sequence(TokenType type, KeySequence seq) {
  return static_cast<std::uint8_t>((static_cast<unsigned>(type) << 7) |
                                   seq.value());
}

struct CipherCtxFree {
  void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxFree>;

const EVP_CIPHER* aes128gcm() {
  static EVP_CIPHER* const kCipher =
      EVP_CIPHER_fetch(nullptr, "AES-128-GCM", nullptr);
  return kCipher;
}

CipherCtx new_ctx() {
  CipherCtx ctx(EVP_CIPHER_CTX_new());
  if (!ctx) throw std::runtime_error("EVP_CIPHER_CTX_new failed");
  return ctx;
}

}  // namespace

std::array<std::uint8_t, kTokenHeaderSize> encode_header(const TokenHeader& h) {
  std::array<std::uint8_t, kTokenHeaderSize> out{};
  out[0] = type_and_sequence(h.type, h.key_sequence);
  for (int i = 0; i < 8; ++i) {
    out[1 + i] = static_cast<std::uint8_t>(h.tin >> (56 - 8 * i));
  }
  const std::uint32_t word =
      (static_cast<std::uint32_t>(h.mrn.value()) << 4) | h.cci.value();
  for (int i = 0; i < 4; ++i) {
    out[9 + i] = static_cast<std::uint8_t>(word >> (24 - 8 * i));
  }
  return out;
}

TokenHeader decode_header(ByteView bytes) {
  if (bytes.size() < kTokenHeaderSize) fail(TokenErrc::kTruncatedToken);
  ByteReader r(bytes);
  TokenHeader h;
  const std::uint8_t b0 = r.u8();
  h.type = static_cast<TokenType>(b0 >> 7);
  h.key_sequence = KeySequence(b0 & 0x7f);
  h.tin = r.u64();
  const std::uint32_t word = r.u32();
  h.mrn = Mrn(word >> 4);
  h.cci = Cci(word & 0x0f);
  return h;
}

Bytes encode_token(const RetryToken& token) {
  if (token.encrypted_body.size() > kMaxEtbLength) fail(TokenErrc::kInvalidField);
  Bytes out;
  out.reserve(kMinTokenSize + token.encrypted_body.size());
  ByteWriter w(out);
  w.bytes(encode_header(token.header));
  w.u16(static_cast<std::uint16_t>(token.encrypted_body.size()));
  w.bytes(token.encrypted_body);
  w.bytes(token.icv);
  return out;
}

RetryToken decode_token(ByteView bytes) {
  if (bytes.size() < kMinTokenSize) fail(TokenErrc::kTruncatedToken);
  ByteReader r(bytes);
  RetryToken t;
  t.header = decode_header(r.take(kTokenHeaderSize));
  const std::size_t etb_len = r.u16();
  if (r.remaining() != etb_len + kIcvSize) fail(TokenErrc::kLengthMismatch);
  t.encrypted_body = r.take_bytes(etb_len);
  ByteView icv = r.take(kIcvSize);
  std::copy(icv.begin(), icv.end(), t.icv.begin());
  return t;
}

Bytes encode_body(const TokenBody& body) {
  if (body.odcid.size() > kMaxConnectionIdLength ||
      body.opaque.size() > 0xffff) {
    fail(TokenErrc::kInvalidField);
  }
  Bytes out;
  ByteWriter w(out);
  w.u64(body.expiry);
  w.u8(static_cast<std::uint8_t>(body.odcid.size()));
  w.bytes(body.odcid);
  w.u16(body.source_port);
  w.u16(static_cast<std::uint16_t>(body.opaque.size()));
  w.bytes(body.opaque);
  return out;
}

TokenBody decode_body(ByteView bytes) {
  try {
    ByteReader r(bytes);
    TokenBody b;
    b.expiry = r.u64();
    const std::size_t odcid_len = r.u8();
    if (odcid_len > kMaxConnectionIdLength) fail(TokenErrc::kMalformedBody);
    b.odcid = r.take_bytes(odcid_len);
    b.source_port = r.u16();
    b.opaque = r.take_bytes(r.u16());
    if (!r.empty()) fail(TokenErrc::kMalformedBody);
    return b;
  } catch (const ReaderUnderflow&) {
    fail(TokenErrc::kMalformedBody);
  }
}

void patch_mrn(Bytes& encoded_token, Mrn mrn) {
  if (encoded_token.size() < kMinTokenSize) fail(TokenErrc::kTruncatedToken);
  std::uint8_t* word = encoded_token.data() + kMrnWordOffset;
  const std::uint32_t cci = word[3] & 0x0f;
  const std::uint32_t v = (mrn.value() << 4) | cci;
  word[0] = static_cast<std::uint8_t>(v >> 24);
  word[1] = static_cast<std::uint8_t>(v >> 16);
  word[2] = static_cast<std::uint8_t>(v >> 8);
  word[3] = static_cast<std::uint8_t>(v);
}

TokenKeyStore::TokenKeyStore(KeySequence active, const TokenKey& key)
    : active_(active) {
  entries_.emplace(active.value(), key);
}

TokenKeyStore TokenKeyStore::generate(RandomSource& rng, KeySequence active) {
  TokenKey key;
  rng.fill(key.key);
  rng.fill(key.iv_base);
  return TokenKeyStore(active, key);
}

void TokenKeyStore::add(KeySequence seq, const TokenKey& key) {
  entries_[seq.value()] = key;
}

void TokenKeyStore::set_active(KeySequence seq) {
  if (!contains(seq)) fail(TokenErrc::kUnknownKeySequence);
  active_ = seq;
}

const TokenKey& TokenKeyStore::lookup(KeySequence seq) const {
  auto it = entries_.find(seq.value());
  if (it == entries_.end()) fail(TokenErrc::kUnknownKeySequence);
  return it->second;
}

bool TokenKeyStore::contains(KeySequence seq) const {
  return entries_.count(seq.value()) != 0;
}

SharedKeyStore::SharedKeyStore(std::shared_ptr<const TokenKeyStore> store)
    : store_(std::move(store)) {}

std::shared_ptr<const TokenKeyStore> SharedKeyStore::load() const {
  std::lock_guard lock(mu_);
  return store_;
}

void SharedKeyStore::rotate(std::shared_ptr<const TokenKeyStore> store) {
  std::lock_guard lock(mu_);
  store_ = std::move(store);
}

AssociatedData make_associated_data(const IpAddress& client_ip,
                                    const TokenHeader& header, ByteView rscid) {
  AssociatedData ad;
  ad.client_ip = client_ip;
  ad.type = header.type;
  ad.key_sequence = header.key_sequence;
  ad.tin = header.tin;
  ad.cci = header.cci;
  ad.rscid.assign(rscid.begin(), rscid.end());
  return ad;
}

Bytes serialize(const AssociatedData& ad) {
  if (ad.rscid.size() > kMaxConnectionIdLength) fail(TokenErrc::kInvalidField);
  Bytes out;
  out.reserve(16 + 1 + 8 + 1 + 1 + ad.rscid.size());
  ByteWriter w(out);
  w.bytes(ad.client_ip);
  w.u8(type_and_sequence(ad.type, ad.key_sequence));
  w.u64(ad.tin);
  w.u8(ad.cci.value());
  w.u8(static_cast<std::uint8_t>(ad.rscid.size()));
  w.bytes(ad.rscid);
  return out;
}

Nonce derive_nonce(const TokenKey& key, std::uint64_t tin) {
  Nonce n = key.iv_base;
  for (int i = 0; i < 8; ++i) {
    n[4 + i] ^= static_cast<std::uint8_t>(tin >> (56 - 8 * i));
  }
  return n;
}

RetryToken seal_token(const TokenKeyStore& keys, const TokenHeader& header,
                      const TokenBody& body, const AssociatedData& ad) {
  if (header.mrn.value() != 0) {
    throw std::invalid_argument("seal_token: MRN must be zero at issuance");
  }
  if (ad.tin != header.tin || ad.cci != header.cci ||
      ad.key_sequence != header.key_sequence || ad.type != header.type) {
    throw std::invalid_argument("seal_token: associated data disagrees with header");
  }
  const TokenKey& key = keys.lookup(header.key_sequence);
  const Nonce nonce = derive_nonce(key, header.tin);
  const Bytes plaintext = encode_body(body);
  const Bytes aad = serialize(ad);

  RetryToken token;
  token.header = header;
  token.encrypted_body.resize(plaintext.size());

  ++detail::mutable_thread_work().aead_ops;
  CipherCtx ctx = new_ctx();
  int len = 0;
  if (EVP_EncryptInit_ex2(ctx.get(), aes128gcm(), key.key.data(), nonce.data(),
                          nullptr) != 1 ||
      EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(),
                        static_cast<int>(aad.size())) != 1 ||
      EVP_EncryptUpdate(ctx.get(), token.encrypted_body.data(), &len,
                        plaintext.data(),
                        static_cast<int>(plaintext.size())) != 1 ||
      EVP_EncryptFinal_ex(ctx.get(), token.encrypted_body.data() + len, &len) !=
          1 ||
      EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kIcvSize,
                          token.icv.data()) != 1) {
    throw std::runtime_error("AES-128-GCM seal failed");
  }
  return token;
}

TokenBody open_token(const TokenKeyStore& keys, const RetryToken& token,
                     const AssociatedData& ad, std::uint64_t now_unix) {
  const TokenKey& key = keys.lookup(token.header.key_sequence);
  const Nonce nonce = derive_nonce(key, token.header.tin);
  const Bytes aad = serialize(ad);

  Bytes plaintext(token.encrypted_body.size());
  Icv tag = token.icv;

  ++detail::mutable_thread_work().aead_ops;
  CipherCtx ctx = new_ctx();
  int len = 0;
  if (EVP_DecryptInit_ex2(ctx.get(), aes128gcm(), key.key.data(), nonce.data(),
                          nullptr) != 1 ||
      EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(),
                        static_cast<int>(aad.size())) != 1 ||
      EVP_DecryptUpdate(ctx.get(), plaintext.data(), &len,
                        token.encrypted_body.data(),
                        static_cast<int>(token.encrypted_body.size())) != 1 ||
      EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kIcvSize,
                          tag.data()) != 1) {
    throw std::runtime_error("AES-128-GCM open setup failed");
  }
  if (EVP_DecryptFinal_ex(ctx.get(), plaintext.data() + len, &len) != 1) {
    fail(TokenErrc::kAuthenticationFailed);
  }

  TokenBody body = decode_body(plaintext);
  if (now_unix > body.expiry) fail(TokenErrc::kExpired);
  return body;
}

}  // namespace qfam
