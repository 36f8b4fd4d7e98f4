#include "cerberus/digest.hpp"

#include <openssl/evp.h>

#include "cerberus/error.hpp"

namespace cerberus {

namespace {
EVP_MD_CTX* as_ctx(void* p) { return static_cast<EVP_MD_CTX*>(p); }
}  // namespace

Sha256Builder::Sha256Builder() : ctx_(EVP_MD_CTX_new()) {
  if (ctx_ == nullptr || EVP_DigestInit_ex(as_ctx(ctx_), EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::InvalidArgument, "sha256 init failed");
  }
}

Sha256Builder::~Sha256Builder() { EVP_MD_CTX_free(as_ctx(ctx_)); }

Sha256Builder& Sha256Builder::update(std::span<const std::uint8_t> bytes) {
  EVP_DigestUpdate(as_ctx(ctx_), bytes.data(), bytes.size());
  return *this;
}

Sha256Builder& Sha256Builder::update(std::string_view text) {
  EVP_DigestUpdate(as_ctx(ctx_), text.data(), text.size());
  return *this;
}

Sha256Builder& Sha256Builder::field(std::string_view text) {
  return field(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Sha256Builder& Sha256Builder::field(std::span<const std::uint8_t> bytes) {
  std::uint8_t len[8];
  auto n = static_cast<std::uint64_t>(bytes.size());
  for (int i = 0; i < 8; ++i) len[i] = static_cast<std::uint8_t>(n >> (8 * i));
  update(std::span<const std::uint8_t>(len, 8));
  return update(bytes);
}

Sha256 Sha256Builder::finish() {
  Sha256 out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(as_ctx(ctx_), out.data(), &len);
  return out;
}

Sha256 sha256(std::string_view text) { return Sha256Builder().update(text).finish(); }

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out += kDigits[b >> 4];
    out += kDigits[b & 0xF];
  }
  return out;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

}  // namespace cerberus
