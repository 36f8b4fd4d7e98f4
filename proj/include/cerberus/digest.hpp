#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace cerberus {

using Sha256 = std::array<std::uint8_t, 32>;

class Sha256Builder {
 public:
  Sha256Builder();
  ~Sha256Builder();
  Sha256Builder(const Sha256Builder&) = delete;
  Sha256Builder& operator=(const Sha256Builder&) = delete;

  Sha256Builder& update(std::span<const std::uint8_t> bytes);
  Sha256Builder& update(std::string_view text);
  // Length-prefixed update, so field boundaries cannot alias.
  Sha256Builder& field(std::string_view text);
  Sha256Builder& field(std::span<const std::uint8_t> bytes);
  Sha256 finish();

 private:
  void* ctx_;
};

Sha256 sha256(std::string_view text);
std::string to_hex(std::span<const std::uint8_t> bytes);
std::string base64_encode(std::span<const std::uint8_t> bytes);

}  // namespace cerberus
