#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace codepoison::detail {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr); }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::string_view bytes) { EVP_DigestUpdate(ctx_, bytes.data(), bytes.size()); }

  void update_u64(std::uint64_t value) {
    std::array<char, 8> le{};
    for (std::size_t k = 0; k < 8; ++k) le[k] = static_cast<char>((value >> (8 * k)) & 0xFF);
    update(std::string_view(le.data(), le.size()));
  }

  // Length-prefixed so that field boundaries are part of the hash.
  void update_field(std::string_view field) {
    update_u64(field.size());
    update(field);
  }

  std::array<unsigned char, 32> bytes() {
    std::array<unsigned char, 32> out{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, out.data(), &len);
    return out;
  }

  std::string hex() {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s;
    for (unsigned char b : bytes()) {
      s += kHex[b >> 4];
      s += kHex[b & 0xF];
    }
    return s;
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::string_view bytes) {
  Sha256 sha;
  sha.update(bytes);
  return sha.hex();
}

}  // namespace codepoison::detail
