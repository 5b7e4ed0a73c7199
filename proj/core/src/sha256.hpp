#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <memory>
#include <stdexcept>

#include "qfam/bytes.hpp"

namespace qfam::detail {

// Reusable SHA-256 context. The EVP_MD is fetched once per process so the hot
// loop pays only Init/Update/Final.
class Sha256 {
 public:
  using Digest = std::array<std::uint8_t, 32>;

  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_) throw std::runtime_error("EVP_MD_CTX_new failed");
  }

  Digest operator()(ByteView data) {
    Digest out{};
    unsigned int len = 0;
    if (EVP_DigestInit_ex(ctx_.get(), md(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx_.get(), data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx_.get(), out.data(), &len) != 1) {
      throw std::runtime_error("SHA-256 failed");
    }
    return out;
  }

 private:
  static const EVP_MD* md() {
    static EVP_MD* const kMd = EVP_MD_fetch(nullptr, "SHA256", nullptr);
    return kMd;
  }

  struct Free {
    void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
  };
  std::unique_ptr<EVP_MD_CTX, Free> ctx_;
};

}  // namespace qfam::detail
